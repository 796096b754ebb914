"""Class-level sampling distributions and the seeded two-stage draw engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .difficulty import ClassState, class_weights
from .errors import ConfigError

SAMPLER_KINDS = ("uniform", "class_frequency", "class_aware", "cdb_s")


class DegenerateDistributionError(ConfigError):
    pass


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "uniform"
    floor: float | None = None  # per-class mass floor for cdb_s; None -> 1e-4 / N
    epoch_size: int | None = None  # None -> size of the training set

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler {self.kind!r}; valid: {', '.join(SAMPLER_KINDS)}")
        if self.floor is not None and self.floor < 0:
            raise ConfigError("floor must be non-negative")
        if self.epoch_size is not None and self.epoch_size < 1:
            raise ConfigError("epoch_size must be positive")


def cdb_distribution(difficulties, tau_value: float) -> np.ndarray:
    """Normalised ``d_c ** tau`` without any floor."""
    w = class_weights(difficulties, tau_value)
    total = w.sum()
    if total <= 0:
        raise DegenerateDistributionError("every class difficulty is zero; no sampling mass left")
    return w / total


def class_distribution(spec: SamplerSpec, state: ClassState | None, tau_value: float,
                       class_counts) -> np.ndarray:
    counts = np.asarray(class_counts, dtype=np.float64)
    n = len(counts)
    if n == 0 or np.any(counts < 1):
        raise ConfigError("every class needs at least one training sample")
    if spec.kind == "uniform":
        return counts / counts.sum()
    if spec.kind == "class_frequency":
        # oversample to balance: per-sample mass proportional to 1 / M_c
        return np.ones(n) / n
    if spec.kind == "class_aware":
        return np.full(n, 1.0 / n)
    if state is None:
        raise ConfigError("cdb_s needs a difficulty snapshot")
    floor = 1e-4 / n if spec.floor is None else spec.floor
    lam = n * floor
    if lam >= 1.0:
        raise ConfigError("floor must be below 1/N")
    if lam == 0.0:
        return cdb_distribution(state.difficulties, tau_value)
    w = class_weights(state.difficulties, tau_value)
    total = w.sum()
    if total <= 0:
        return np.full(n, 1.0 / n)
    p = w / total
    # (1 - lam) p + lam / N, written so an already-uniform p is left bit-exact
    return p + lam * (1.0 / n - p)


class DrawEngine:
    """Draws a class from a distribution, then a row uniformly within it."""

    def __init__(self, labels, num_classes: int):
        labels = np.asarray(labels, dtype=np.int64)
        self.members = [np.flatnonzero(labels == c) for c in range(num_classes)]

    def draw(self, distribution, epoch_size: int, rng: np.random.Generator) -> np.ndarray:
        distribution = np.asarray(distribution, dtype=np.float64)
        if len(distribution) != len(self.members):
            raise ConfigError("distribution length does not match the number of classes")
        if np.any(distribution < 0) or abs(distribution.sum() - 1.0) > 1e-9:
            raise ConfigError("distribution must be non-negative and sum to 1")
        cdf = np.cumsum(distribution)
        cdf[-1] = 1.0
        classes = np.searchsorted(cdf, rng.random(epoch_size), side="right")
        # guard against mass placed on an empty class
        sizes = np.array([len(m) for m in self.members])
        if np.any(sizes[classes] == 0):
            raise AssertionError("drew a class with no training samples")
        offsets = np.floor(rng.random(epoch_size) * sizes[classes]).astype(np.int64)
        out = np.empty(epoch_size, dtype=np.int64)
        for c in np.unique(classes):
            sel = classes == c
            out[sel] = self.members[c][offsets[sel]]
        return out


def draw_epoch(distribution, dataset, epoch_size: int, seed) -> np.ndarray:
    engine = DrawEngine(dataset.labels, dataset.num_classes)
    return engine.draw(distribution, epoch_size, np.random.default_rng(seed))


def per_sample_probabilities(distribution, labels, num_classes: int) -> np.ndarray:
    """Probability of drawing each individual row under the two-stage scheme."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)
    return np.asarray(distribution)[labels] / counts[labels]
