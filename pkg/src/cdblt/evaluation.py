"""Test metrics, shot-wise breakdowns, hard-instance analysis and report tables."""

from __future__ import annotations

import csv
import io
import json
from collections import OrderedDict, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import AggregationError
from .losses import focal_factor
from .model import predict_proba

REPORT_SCHEMA = "cdblt.report/1"
SHOT_NAMES = ("many", "medium", "few")


@dataclass(frozen=True)
class ShotGroups:
    """Many (> many_threshold), medium, few (<= few_threshold) by training count."""

    many: tuple
    medium: tuple
    few: tuple
    many_threshold: int = 100
    few_threshold: int = 20

    @classmethod
    def from_counts(cls, train_counts, many_threshold: int = 100, few_threshold: int = 20) -> "ShotGroups":
        counts = np.asarray(train_counts)
        many = tuple(int(c) for c in np.flatnonzero(counts > many_threshold))
        few = tuple(int(c) for c in np.flatnonzero(counts <= few_threshold))
        medium = tuple(int(c) for c in np.flatnonzero((counts <= many_threshold) & (counts > few_threshold)))
        return cls(many, medium, few, many_threshold, few_threshold)

    def items(self):
        return (("many", self.many), ("medium", self.medium), ("few", self.few))

    def group_of(self, num_classes: int) -> np.ndarray:
        out = np.full(num_classes, -1, dtype=np.int64)
        for g, (_, members) in enumerate(self.items()):
            out[list(members)] = g
        return out


@dataclass
class MetricsReport:
    top1: float
    top5: float
    macro_precision: float
    macro_recall: float
    per_class_accuracy: list
    per_class_precision: list
    shot_accuracies: dict = field(default_factory=dict)
    head_tail: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        return 1.0 - self.top1

    def to_dict(self) -> dict:
        return asdict(self)


def top_k_hits(probs: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    k = min(k, probs.shape[1])
    # stable sort on -p: equal probabilities rank the lower class index first
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def _precision_recall(pred, labels, classes, num_classes):
    tp = np.bincount(labels[pred == labels], minlength=num_classes).astype(np.float64)
    predicted = np.bincount(pred, minlength=num_classes).astype(np.float64)
    actual = np.bincount(labels, minlength=num_classes).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros(num_classes), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros(num_classes), where=actual > 0)
    return precision, recall


def head_classes(train_counts, k: int) -> list:
    counts = np.asarray(train_counts)
    order = np.argsort(-counts, kind="stable")
    return sorted(int(c) for c in order[:k])


def metrics_from_probs(probs, labels, train_counts=None, shot_groups: ShotGroups | None = None,
                       head_k: int | None = None) -> MetricsReport:
    """Metrics for predicted probabilities; never-predicted classes get precision 0."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = probs.shape[1]
    pred = probs.argmax(axis=1)
    present = np.flatnonzero(np.bincount(labels, minlength=n_classes) > 0)
    precision, recall = _precision_recall(pred, labels, present, n_classes)
    report = MetricsReport(
        top1=float(np.mean(pred == labels)),
        top5=float(np.mean(top_k_hits(probs, labels, 5))),
        macro_precision=float(precision[present].mean()),
        macro_recall=float(recall[present].mean()),
        per_class_accuracy=recall.tolist(),
        per_class_precision=precision.tolist(),
    )
    if train_counts is not None:
        groups = shot_groups or ShotGroups.from_counts(train_counts)
        for name, members in groups.items():
            members = [c for c in members if c in set(present.tolist())]
            if members:
                mask = np.isin(labels, members)
                report.shot_accuracies[name] = float(np.mean(pred[mask] == labels[mask]))
            else:
                report.shot_accuracies[name] = None
        k = head_k if head_k is not None else max(1, min(5, n_classes // 2))
        head = head_classes(train_counts, k)
        tail = [c for c in range(n_classes) if c not in head]
        for name, members in (("head", head), ("tail", tail)):
            members = [c for c in members if c in set(present.tolist())]
            if members:
                report.head_tail[f"{name}_precision"] = float(precision[members].mean())
                report.head_tail[f"{name}_recall"] = float(recall[members].mean())
        report.head_tail["head_classes"] = head
    return report


def evaluate(model, test_set, train_counts=None, shot_groups=None, head_k=None) -> MetricsReport:
    if len(test_set) == 0:
        raise AggregationError("empty test set")
    probs = predict_proba(model, test_set.features)
    return metrics_from_probs(probs, test_set.labels, train_counts, shot_groups, head_k)


# --------------------------------------------------------------------------
# hard instances


def hard_instance_counts(weights_per_sample, labels, groups: ShotGroups, threshold: float = 0.8) -> dict:
    """Samples per shot group whose weight exceeds ``threshold``.

    A threshold of 0 counts every sample, zero-weight ones included.
    """
    w = np.asarray(weights_per_sample, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    hard = w >= 0 if threshold == 0 else w > threshold
    return {name: int(np.sum(hard & np.isin(labels, list(members)))) for name, members in groups.items()}


def average_hard_counts(counts: dict, groups: ShotGroups) -> dict:
    """Per-group hard count divided by the number of classes in the group."""
    return {name: (counts[name] / len(members) if members else None) for name, members in groups.items()}


class HardInstanceTracker:
    """Snapshot hook that records focal and class-level hard-instance averages."""

    def __init__(self, train_set, gamma: float = 1.0, threshold: float = 0.8, groups: ShotGroups | None = None):
        self.train_set = train_set
        self.gamma = gamma
        self.threshold = threshold
        self.groups = groups or ShotGroups.from_counts(train_set.class_counts)
        self.rows = []

    def __call__(self, model, record: dict) -> dict:
        labels = self.train_set.labels
        probs = predict_proba(model, self.train_set.features)
        p_true = np.clip(probs[np.arange(len(labels)), labels], 1e-12, 1 - 1e-12)
        focal = focal_factor(p_true, self.gamma)
        class_w = np.asarray(record["weights"])[labels]
        row = {
            "event": "hard",
            "stage": record.get("stage", 1),
            "epoch": record["epoch"],
            "focal": average_hard_counts(hard_instance_counts(focal, labels, self.groups, self.threshold),
                                         self.groups),
            "class": average_hard_counts(hard_instance_counts(class_w, labels, self.groups, self.threshold),
                                         self.groups),
        }
        self.rows.append(row)
        return row


# --------------------------------------------------------------------------
# tables


def method_label(loss_kind: str, sampler_kind: str) -> str:
    return loss_kind if sampler_kind in ("uniform", None) else sampler_kind


def _tau_order(label: str):
    if label.startswith("fixed:"):
        return (0, float(label.split(":", 1)[1]), label)
    rank = {"linear": 1, "polynomial": 2, "logarithmic": 3, "sigmoidal": 4}
    return (1, rank.get(label.split(":")[0], 9), label)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else (f"{v:.6f}" if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def _mean_std(values):
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def report_tables(runs) -> tuple[dict, dict]:
    """Aggregate run summaries into CSV tables and a JSON-ready summary.

    Each run is a mapping with ``label``, ``params`` (flat config keys),
    ``seed``, ``num_classes`` and ``metrics`` (a ``MetricsReport`` dict).
    Returns ``({table_name: csv_text}, summary)``.
    """
    runs = list(runs)
    if not runs:
        raise AggregationError("no runs to report")
    class_counts = {r["num_classes"] for r in runs}
    if len(class_counts) != 1:
        raise AggregationError(f"runs disagree on the number of classes: {sorted(class_counts)}")

    by_label = OrderedDict()
    for r in runs:
        by_label.setdefault(r["label"], []).append(r)
    method_rows = []
    for label, group in by_label.items():
        m = [g["metrics"] for g in group]
        err, err_sd = _mean_std([100.0 * (1.0 - x["top1"]) for x in m])
        shot = [_mean_std([100.0 * x["shot_accuracies"].get(s) if x["shot_accuracies"].get(s) is not None
                           else None for x in m])[0] for s in SHOT_NAMES]
        method_rows.append([label, len(group), err, err_sd,
                            _mean_std([100.0 * x["top5"] for x in m])[0],
                            _mean_std([100.0 * x["macro_precision"] for x in m])[0],
                            _mean_std([100.0 * x["macro_recall"] for x in m])[0], *shot])
    tables = {"methods": _csv(["method", "runs", "error_mean", "error_std", "top5", "macro_precision",
                               "macro_recall", "many_acc", "medium_acc", "few_acc"], method_rows)}

    if any("tau.schedule" in r["params"] for r in runs) and len({r["params"].get("tau.schedule") for r in runs}) > 1:
        cells = defaultdict(list)
        cols = []
        for r in runs:
            p = r["params"]
            col = method_label(p.get("loss.kind", "ce"), p.get("sampler.kind", "uniform"))
            if col not in cols:
                cols.append(col)
            cells[(p.get("tau.schedule"), col)].append(100.0 * (1.0 - r["metrics"]["top1"]))
        taus = sorted({r["params"].get("tau.schedule") for r in runs}, key=_tau_order)
        rows = []
        for t in taus:
            row = [t]
            for col in cols:
                mean, sd = _mean_std(cells.get((t, col), []))
                row += [mean, sd]
            rows.append(row)
        header = ["tau"] + [f"{c}_{s}" for c in cols for s in ("error_mean", "error_std")]
        tables["tau_sweep"] = _csv(header, rows)

    if any(r["params"].get("stage2.method") not in (None, "none") for r in runs):
        cells = defaultdict(list)
        stage1_cols, stage2_rows = [], []
        for r in runs:
            p = r["params"]
            s1 = method_label(p.get("loss.kind", "ce"), p.get("sampler.kind", "uniform"))
            s2 = (p.get("stage2.method"), method_label(p.get("stage2.loss", "ce"), p.get("stage2.sampler", "uniform")))
            if s1 not in stage1_cols:
                stage1_cols.append(s1)
            if s2 not in stage2_rows:
                stage2_rows.append(s2)
            cells[(s2, s1)].append(100.0 * (1.0 - r["metrics"]["top1"]))
        stage2_rows.sort(key=lambda s: (str(s[0]), str(s[1])))
        rows = [[m, s2] + [_mean_std(cells.get(((m, s2), s1), []))[0] for s1 in stage1_cols]
                for m, s2 in stage2_rows]
        tables["decoupled"] = _csv(["stage2_method", "stage2_balancing"] + stage1_cols, rows)

    summary = {
        "schema": REPORT_SCHEMA,
        "num_runs": len(runs),
        "num_classes": class_counts.pop(),
        "methods": [dict(zip(["method", "runs", "error_mean", "error_std"], row[:4])) for row in method_rows],
        "tables": sorted(tables),
    }
    return tables, summary


def write_report(tables: dict, summary: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in tables.items():
        (out_dir / f"{name}.csv").write_text(text, encoding="utf-8")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
