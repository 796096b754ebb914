"""Cross-entropy, focal and class-weighted variants over softmax outputs.

All losses share one form, ``w_c * (1 - p_true)**gamma * -log(p_true)``:
CE-family kinds use gamma = 0 and unweighted kinds use w = 1. Sharing the
arithmetic keeps reduced configurations bit-identical to plain CE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

LOSS_KINDS = ("ce", "focal", "cdb_w_ce", "cdb_w_fl", "inv_freq_ce")
WEIGHTED_KINDS = ("cdb_w_ce", "cdb_w_fl", "inv_freq_ce")
FOCAL_KINDS = ("focal", "cdb_w_fl")

PROB_CLIP = 1e-12


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ce"
    gamma: float = 1.0
    class_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.kind!r}; valid: {', '.join(LOSS_KINDS)}")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=np.float64)
            if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ConfigError("class_weights must be a finite non-negative vector")
            object.__setattr__(self, "class_weights", w)

    @property
    def effective_gamma(self) -> float:
        return float(self.gamma) if self.kind in FOCAL_KINDS else 0.0

    def with_weights(self, weights) -> "LossSpec":
        return LossSpec(self.kind, self.gamma, weights)


@dataclass(frozen=True)
class BatchProbs:
    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
            raise ConfigError("probs must be (batch, classes) with one label per row")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def true_probs(self) -> np.ndarray:
        p = self.probs[np.arange(len(self)), self.labels]
        return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


def _sample_weights(spec: LossSpec, batch: BatchProbs) -> np.ndarray:
    if spec.kind in WEIGHTED_KINDS:
        if spec.class_weights is None:
            raise ConfigError(f"loss {spec.kind!r} needs class_weights")
        if len(spec.class_weights) != batch.probs.shape[1]:
            raise ConfigError(
                f"{len(spec.class_weights)} class weights for {batch.probs.shape[1]} classes")
        return spec.class_weights[batch.labels]
    return np.ones(len(batch))


def focal_factor(p_true, gamma: float) -> np.ndarray:
    """Per-instance focal weight ``(1 - p_true) ** gamma``."""
    return np.power(1.0 - np.asarray(p_true, dtype=np.float64), gamma)


def loss_forward(spec: LossSpec, batch: BatchProbs) -> tuple[np.ndarray, float]:
    if len(batch) == 0:
        raise ConfigError("empty batch")
    w = _sample_weights(spec, batch)
    q = batch.true_probs
    per_sample = w * focal_factor(q, spec.effective_gamma) * -np.log(q)
    return per_sample, float(per_sample.mean())


def loss_backward(spec: LossSpec, batch: BatchProbs) -> np.ndarray:
    """Gradient of the mean loss with respect to the pre-softmax logits."""
    n = len(batch)
    w = _sample_weights(spec, batch)
    gamma = spec.effective_gamma
    onehot = np.zeros_like(batch.probs)
    onehot[np.arange(n), batch.labels] = 1.0
    residual = batch.probs - onehot
    if gamma == 0.0:
        coeff = w * focal_factor(batch.true_probs, 0.0)
    else:
        # d l / d z = -q f'(q) (onehot - p), with f(q) = -(1-q)^g log q
        q = batch.true_probs
        coeff = w * (np.power(1.0 - q, gamma) - gamma * q * np.power(1.0 - q, gamma - 1.0) * np.log(q))
    return coeff[:, None] * residual / n


def inv_freq_weights(class_counts) -> np.ndarray:
    """Inverse-frequency weights normalised to average 1 across classes."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if len(counts) == 0 or np.any(counts < 1):
        raise ConfigError("inverse-frequency weights need every class count >= 1")
    inv = 1.0 / counts
    return inv * len(counts) / inv.sum()
