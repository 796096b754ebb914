"""Datasets, file loaders and imbalance-injection protocols.

Every sampling routine draws from ``numpy.random.default_rng(seed)`` (PCG64),
so a given seed reproduces the same rows exactly.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConfigError, ConsistencyError, DataFormatError

PRNG_NAME = "numpy-PCG64"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledDataset:
    """Feature rows with integer labels in ``[0, num_classes)``.

    ``ids`` carries the identity of each row in the pool it was drawn from,
    which is what disjointness checks compare.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(len(features), -1) if len(features) else features.reshape(0, 0)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        ids = np.arange(len(labels), dtype=np.int64) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if features.shape[0] != labels.shape[0] or ids.shape[0] != labels.shape[0]:
            raise ConsistencyError(
                f"{features.shape[0]} feature rows, {labels.shape[0]} labels, {ids.shape[0]} ids"
            )
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConsistencyError(f"labels must lie in [0, {self.num_classes})")
        for arr in (features, labels, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def dims(self) -> int:
        return int(self.features.shape[1]) if self.features.ndim == 2 else 0

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes).astype(np.int64)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(self.features[index], self.labels[index], self.num_classes, self.ids[index])

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def is_balanced(self) -> bool:
        counts = self.class_counts
        return len(counts) > 0 and bool(np.all(counts == counts[0]))


@dataclass(frozen=True)
class ImbalanceProfile:
    kind: str
    head_ratio: float | None = None
    mu: float | None = None
    n_max: int | None = None
    total_two_class: int = 5000

    def __post_init__(self):
        if self.kind == "two_class_head_ratio":
            if self.head_ratio is None or not 0.0 < self.head_ratio < 1.0:
                raise ConfigError("head_ratio must lie in (0, 1)")
            if self.total_two_class < 2:
                raise ConfigError("total_two_class must be at least 2")
        elif self.kind == "exponential":
            if self.mu is None or not 0.0 < self.mu <= 1.0:
                raise ConfigError("mu must lie in (0, 1]")
            if self.n_max is None or self.n_max < 1:
                raise ConfigError("n_max must be a positive integer")
        else:
            raise ConfigError(f"unknown imbalance profile kind {self.kind!r}")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def two_class_counts(profile: ImbalanceProfile) -> tuple[int, int]:
    head = round_half_up(profile.head_ratio * profile.total_two_class)
    return head, profile.total_two_class - head


def exponential_counts(n_max: int, mu: float, num_classes: int) -> np.ndarray:
    """Per-class targets ``n_max * mu**((c-1)/(N-1))``, rounded half-up, floor 1."""
    if num_classes < 1:
        raise ConfigError("num_classes must be positive")
    if num_classes == 1:
        return np.array([n_max], dtype=np.int64)
    counts = [
        max(1, round_half_up(n_max * mu ** ((c - 1) / (num_classes - 1))))
        for c in range(1, num_classes + 1)
    ]
    return np.array(counts, dtype=np.int64)


def imbalance_ratio(class_counts) -> float:
    counts = np.asarray(class_counts)
    counts = counts[counts > 0]
    if len(counts) == 0:
        raise ConfigError("no populated classes")
    return float(counts.max() / counts.min())


# --------------------------------------------------------------------------
# loaders


def _read_idx(path: Path, expected_magic: int) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    raw = path.read_bytes()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(shape))
    if len(raw) - header != size:
        raise DataFormatError(f"{path}: payload has {len(raw) - header} bytes, header declares {size}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)


def write_idx(path, array) -> None:
    """Write a uint8 array as an IDX file (1-d labels or 3-d images)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label pair, flattening images and scaling pixels to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"image file declares {images.shape[0]} items but label file declares {labels.shape[0]}"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    num_classes = int(labels.max()) + 1 if len(labels) else 0
    return LabeledDataset(features, labels, num_classes)


def load_csv(path, num_classes: int | None = None) -> LabeledDataset:
    """Read ``label,f1,...,fD`` rows (no header)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    labels, rows = [], []
    width = None
    with open(path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                label = int(row[0])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer label {row[0]!r}") from None
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            labels.append(label)
    if not labels:
        return LabeledDataset(np.zeros((0, 0)), np.zeros(0, dtype=np.int64), num_classes or 0)
    labels = np.array(labels, dtype=np.int64)
    if labels.min() < 0:
        raise DataFormatError(f"{path}: negative label")
    inferred = int(labels.max()) + 1
    return LabeledDataset(np.array(rows, dtype=np.float64), labels, max(inferred, num_classes or 0))


def write_csv(path, dataset: LabeledDataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# protocols


def _take_per_class(source: LabeledDataset, wanted, rng) -> np.ndarray:
    chosen = []
    for c, n in enumerate(wanted):
        idx = source.class_indices(c)
        if len(idx) < n:
            raise CapacityError(f"class {c} has {len(idx)} samples, {n} required")
        chosen.append(rng.permutation(idx)[:n])
    return np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)


def make_two_class_imbalance(source: LabeledDataset, profile: ImbalanceProfile, head_class: int,
                             tail_class: int, seed: int) -> LabeledDataset:
    """Draw a head/tail training pool; labels are remapped to 0 (head) and 1 (tail)."""
    if profile.kind != "two_class_head_ratio":
        raise ConfigError("profile must be two_class_head_ratio")
    if head_class == tail_class:
        raise ConfigError("head and tail class must differ")
    n_head, n_tail = two_class_counts(profile)
    rng = np.random.default_rng(seed)
    picks = []
    for c, n in ((head_class, n_head), (tail_class, n_tail)):
        idx = source.class_indices(c)
        if len(idx) < n:
            raise CapacityError(f"class {c} has {len(idx)} samples, {n} required")
        picks.append(np.sort(rng.permutation(idx)[:n]))
    index = np.concatenate(picks)
    labels = np.concatenate([np.zeros(n_head, dtype=np.int64), np.ones(n_tail, dtype=np.int64)])
    return LabeledDataset(source.features[index], labels, 2, source.ids[index])


def restrict_classes(source: LabeledDataset, classes) -> LabeledDataset:
    """Keep only ``classes`` and relabel them 0..len(classes)-1 in the given order."""
    classes = list(classes)
    mapping = np.full(max(source.num_classes, max(classes) + 1), -1, dtype=np.int64)
    mapping[classes] = np.arange(len(classes))
    keep = np.flatnonzero(np.isin(source.labels, classes))
    return LabeledDataset(source.features[keep], mapping[source.labels[keep]], len(classes), source.ids[keep])


def make_exponential_longtail(source: LabeledDataset, profile: ImbalanceProfile, seed: int) -> LabeledDataset:
    if profile.kind != "exponential":
        raise ConfigError("profile must be exponential")
    wanted = exponential_counts(profile.n_max, profile.mu, source.num_classes)
    rng = np.random.default_rng(seed)
    return source.subset(_take_per_class(source, wanted, rng))


def make_gaussian_blobs(num_classes: int, dims: int, per_class_counts, class_separation: float,
                        seed: int) -> LabeledDataset:
    """Isotropic unit-variance blobs, one per class.

    Centres are a scaled orthonormal simplex when ``dims >= num_classes``
    (every pairwise distance equals ``class_separation``); otherwise seeded
    random centres rescaled so the closest pair sits at that distance.
    """
    counts = np.asarray(per_class_counts, dtype=np.int64)
    if num_classes < 2 or dims < 1 or len(counts) != num_classes or np.any(counts < 1):
        raise ConfigError("need num_classes >= 2, dims >= 1 and one positive count per class")
    if class_separation < 0:
        raise ConfigError("class_separation must be non-negative")
    rng = np.random.default_rng(seed)
    if dims >= num_classes:
        centers = np.zeros((num_classes, dims))
        centers[np.arange(num_classes), np.arange(num_classes)] = class_separation / math.sqrt(2.0)
    else:
        raw = rng.standard_normal((num_classes, dims))
        gaps = np.linalg.norm(raw[:, None, :] - raw[None, :, :], axis=-1)
        closest = gaps[np.triu_indices(num_classes, 1)].min()
        centers = raw * (class_separation / closest)
    features = np.concatenate([centers[c] + rng.standard_normal((n, dims)) for c, n in enumerate(counts)])
    labels = np.repeat(np.arange(num_classes), counts)
    return LabeledDataset(features, labels, num_classes)


def split_balanced(source: LabeledDataset, per_class: int, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Hold out exactly ``per_class`` rows of every class; return (held_out, remainder)."""
    if per_class < 0:
        raise ConfigError("per_class must be non-negative")
    rng = np.random.default_rng(seed)
    held = _take_per_class(source, [per_class] * source.num_classes, rng)
    rest = np.setdiff1d(np.arange(len(source)), held, assume_unique=True)
    return source.subset(held), source.subset(rest)
