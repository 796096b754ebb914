"""Per-class accuracy, class difficulty, performance bias and the focusing parameter."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TAU_KINDS = ("fixed", "linear", "polynomial", "logarithmic", "sigmoidal")
_TAU_ALIASES = {"poly": "polynomial", "log": "logarithmic", "sigmoid": "sigmoidal"}


@dataclass(frozen=True)
class ClassState:
    """Snapshot of per-class accuracy on the balanced difficulty split."""

    correct: np.ndarray
    totals: np.ndarray
    epoch_index: int = 0

    def __post_init__(self):
        correct = np.asarray(self.correct, dtype=np.int64)
        totals = np.asarray(self.totals, dtype=np.int64)
        if correct.shape != totals.shape or correct.ndim != 1 or len(correct) == 0:
            raise ConfigError("correct/totals must be equal-length non-empty vectors")
        if np.any(totals <= 0):
            missing = np.flatnonzero(totals <= 0).tolist()
            raise ConfigError(f"difficulty split has no samples for classes {missing}")
        if np.any(correct < 0) or np.any(correct > totals):
            raise ConfigError("correct counts must lie in [0, totals]")
        object.__setattr__(self, "correct", correct)
        object.__setattr__(self, "totals", totals)

    @property
    def accuracies(self) -> np.ndarray:
        return self.correct / self.totals

    @property
    def difficulties(self) -> np.ndarray:
        return 1.0 - self.accuracies

    @property
    def num_classes(self) -> int:
        return len(self.totals)

    @classmethod
    def initial(cls, num_classes: int) -> "ClassState":
        """State before any measurement: every class fully difficult."""
        return cls(np.zeros(num_classes, dtype=np.int64), np.ones(num_classes, dtype=np.int64), 0)


@dataclass(frozen=True)
class TauSchedule:
    kind: str = "sigmoidal"
    fixed_value: float = 0.0
    t_max: float = 5.0
    epsilon: float = 0.01
    poly_p: int = 2
    update_interval: int = 1

    def __post_init__(self):
        kind = _TAU_ALIASES.get(self.kind, self.kind)
        if kind not in TAU_KINDS:
            raise ConfigError(f"unknown tau schedule {self.kind!r}; valid: {', '.join(TAU_KINDS)}")
        object.__setattr__(self, "kind", kind)
        if self.fixed_value < 0 or self.t_max < 0:
            raise ConfigError("tau values must be non-negative")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if kind == "polynomial" and (int(self.poly_p) != self.poly_p or self.poly_p < 2):
            raise ConfigError("polynomial tau needs an integer p >= 2")
        if self.update_interval < 1:
            raise ConfigError("update_interval must be >= 1")

    @property
    def bias_max(self) -> float:
        return 1.0 / self.epsilon - 1.0

    @classmethod
    def parse(cls, text: str, **params) -> "TauSchedule":
        """Build from ``"fixed:1.5"``, ``"sigmoid"``, ``"poly:3"`` and the like."""
        name, _, arg = str(text).partition(":")
        name = _TAU_ALIASES.get(name.strip(), name.strip())
        if name == "fixed":
            if not arg:
                raise ConfigError("fixed tau needs a value, e.g. fixed:1.5")
            params["fixed_value"] = float(arg)
        elif name == "polynomial" and arg:
            params["poly_p"] = int(arg)
        elif arg:
            raise ConfigError(f"tau schedule {name!r} takes no argument")
        return cls(kind=name, **params)

    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.fixed_value:g}"
        if self.kind == "polynomial" and self.poly_p != 2:
            return f"polynomial:{self.poly_p}"
        return self.kind


def class_accuracy(predictions, labels, num_classes: int, epoch_index: int = 0) -> ClassState:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ConfigError(f"{len(predictions)} predictions for {len(labels)} samples")
    totals = np.bincount(labels, minlength=num_classes)
    correct = np.bincount(labels[predictions == labels], minlength=num_classes)
    return ClassState(correct, totals, epoch_index)


def bias(state_or_accuracies, epsilon: float = 0.01) -> float:
    """``max(max A / (min A + eps) - 1, 0)``; bounded above by ``1/eps - 1``."""
    acc = state_or_accuracies.accuracies if isinstance(state_or_accuracies, ClassState) else np.asarray(
        state_or_accuracies, dtype=np.float64)
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    return max(float(acc.max()) / (float(acc.min()) + epsilon) - 1.0, 0.0)


def tau(schedule: TauSchedule, bias_value: float) -> float:
    if schedule.kind == "fixed":
        return float(schedule.fixed_value)
    b_max = schedule.bias_max
    # small slack for accumulated rounding in 1/eps - 1
    if not (0.0 <= bias_value <= b_max * (1 + 1e-12)):
        raise ValueError(f"bias {bias_value} outside [0, {b_max}]")
    bias_value = min(bias_value, b_max)
    t_max = schedule.t_max
    if schedule.kind == "linear":
        return bias_value / b_max * t_max
    if schedule.kind == "polynomial":
        return (bias_value / b_max) ** schedule.poly_p * t_max
    if schedule.kind == "logarithmic":
        # increasing and non-negative: 0 at bias 0, t_max at bias_max
        return t_max * math.log(bias_value + 1.0) / math.log(b_max + 1.0)
    return t_max * (2.0 / (1.0 + math.exp(-bias_value)) - 1.0)


def class_weights(state_or_difficulties, tau_value: float) -> np.ndarray:
    """``d_c ** tau`` with ``0 ** 0 == 1``, so tau = 0 gives unit weights."""
    d = state_or_difficulties.difficulties if isinstance(state_or_difficulties, ClassState) else np.asarray(
        state_or_difficulties, dtype=np.float64)
    if tau_value < 0:
        raise ValueError("tau must be non-negative")
    return np.power(d, float(tau_value))


def snapshot_record(state: ClassState, bias_value: float, tau_value: float, weights) -> dict:
    return {
        "event": "snapshot",
        "epoch": int(state.epoch_index),
        "accuracy": state.accuracies.tolist(),
        "difficulty": state.difficulties.tolist(),
        "bias": float(bias_value),
        "tau": float(tau_value),
        "weights": np.asarray(weights).tolist(),
    }
