"""Training loop with per-interval difficulty refresh and decoupled two-stage training."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import LabeledDataset
from .difficulty import ClassState, TauSchedule, bias, class_accuracy, class_weights, snapshot_record, tau
from .errors import ConfigError, TrainingError
from .evaluation import MetricsReport, evaluate
from .losses import LOSS_KINDS, LossSpec, inv_freq_weights
from .model import MlpModel, init_classifier, init_model, loss_and_grads, predict
from .sampling import SAMPLER_KINDS, DrawEngine, SamplerSpec, class_distribution

log = logging.getLogger(__name__)

LOG_SCHEMA = "cdblt.log/1"
LR_SCHEDULES = ("constant", "step", "cosine")
STAGE2_METHODS = ("crt", "lws")


@dataclass(frozen=True)
class Stage2Config:
    method: str = "crt"
    loss: str = "ce"
    sampler: str = "class_aware"
    epochs: int = 10
    lr: float | None = None  # None -> reuse the stage-1 initial rate

    def __post_init__(self):
        method = self.method.lower()
        if method not in STAGE2_METHODS:
            raise ConfigError(f"unknown stage-2 method {self.method!r}; valid: crt, lws")
        object.__setattr__(self, "method", method)
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown stage-2 loss {self.loss!r}")
        if self.sampler not in SAMPLER_KINDS:
            raise ConfigError(f"unknown stage-2 sampler {self.sampler!r}")
        if self.epochs < 0:
            raise ConfigError("stage-2 epochs must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 100
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_schedule: str = "constant"
    milestones: tuple = ()
    lr_factor: float = 0.1
    hidden_dim: int = 64
    seed: int = 0
    loss: str = "ce"
    gamma: float = 1.0
    sampler: str = "uniform"
    sampler_floor: float | None = None
    epoch_size: int | None = None
    tau: TauSchedule = field(default_factory=TauSchedule)
    stage2: Stage2Config | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("lr, momentum and weight_decay must be non-negative")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}; valid: {', '.join(LR_SCHEDULES)}")
        milestones = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(milestones, milestones[1:])) or any(m >= self.epochs or m < 0
                                                                          for m in milestones):
            raise ConfigError("milestones must be strictly increasing and below epochs")
        object.__setattr__(self, "milestones", milestones)
        if self.hidden_dim < 0:
            raise ConfigError("hidden_dim must be >= 0")
        LossSpec(self.loss, self.gamma)
        SamplerSpec(self.sampler, self.sampler_floor, self.epoch_size)

    @property
    def loss_spec(self) -> LossSpec:
        return LossSpec(self.loss, self.gamma)

    @property
    def sampler_spec(self) -> SamplerSpec:
        return SamplerSpec(self.sampler, self.sampler_floor, self.epoch_size)


@dataclass
class TrainedRun:
    model: MlpModel
    log: list
    metrics: MetricsReport | None = None
    stage1_model: MlpModel | None = None

    def log_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log)


def learning_rate(config: TrainConfig, epoch: int, base: float | None = None, epochs: int | None = None) -> float:
    lr0 = config.lr if base is None else base
    total = config.epochs if epochs is None else epochs
    if config.lr_schedule == "constant":
        return lr0
    if config.lr_schedule == "step":
        return lr0 * config.lr_factor ** sum(1 for m in config.milestones if epoch >= m)
    if total == 0:
        return lr0
    return lr0 * (1.0 + math.cos(math.pi * epoch / total)) / 2.0


class SGD:
    """Classical momentum with an L2 weight-decay gradient term."""

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for name, g in grads.items():
            g = g + self.weight_decay * params[name]
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            params[name] -= lr * v


def train_epoch(model: MlpModel, config: TrainConfig, train_set: LabeledDataset, loss_weights,
                sampler_distribution, epoch_index: int, optimizer: SGD | None = None, *,
                lr: float | None = None, names=None, stage: int = 1, engine: DrawEngine | None = None) -> dict:
    """One pass of ``ceil(epoch_size / batch_size)`` SGD steps; updates ``model`` in place."""
    optimizer = optimizer or SGD(config.momentum, config.weight_decay)
    engine = engine or DrawEngine(train_set.labels, train_set.num_classes)
    lr = learning_rate(config, epoch_index) if lr is None else lr
    names = model.trainable("all") if names is None else names
    spec = config.loss_spec.with_weights(loss_weights)
    epoch_size = config.epoch_size or len(train_set)
    rng = np.random.default_rng([config.seed, stage, epoch_index])
    order = engine.draw(sampler_distribution, epoch_size, rng)
    losses = []
    for b, start in enumerate(range(0, epoch_size, config.batch_size)):
        idx = order[start:start + config.batch_size]
        mean, grads, _ = loss_and_grads(model, train_set.features[idx], train_set.labels[idx], spec, names)
        if not math.isfinite(mean):
            raise TrainingError(f"non-finite loss at stage {stage} epoch {epoch_index} batch {b}",
                                epoch=epoch_index, batch=b,
                                params={k: v.copy() for k, v in model.params.items()})
        optimizer.step(model.params, grads, lr)
        losses.append(mean)
    return {"event": "epoch", "stage": stage, "epoch": epoch_index, "lr": lr,
            "loss": float(np.mean(losses)) if losses else 0.0,
            "distribution": np.asarray(sampler_distribution).tolist()}


def measure(model: MlpModel, validation: LabeledDataset, epoch_index: int) -> ClassState:
    return class_accuracy(predict(model, validation.features), validation.labels, model.num_classes, epoch_index)


def _check_splits(train, validation):
    if validation is None:
        raise ConfigError("a validation split is required for difficulty measurement")
    if validation.num_classes != train.num_classes:
        raise ConfigError("train and validation disagree on the number of classes")
    if not validation.is_balanced():
        log.warning("validation split is not class-balanced: %s", validation.class_counts.tolist())
    shared = np.intersect1d(train.ids, validation.ids)
    if len(shared) == len(train) == len(validation) and np.array_equal(train.features, validation.features):
        log.warning("validation split is identical to the training split; difficulty will overfit")
    elif len(shared):
        log.warning("%d samples shared between training and validation splits", len(shared))


def _train_stage(model, config: TrainConfig, train, validation, *, stage, names, lr0, epochs,
                 measured_start, records, on_snapshot):
    optimizer = SGD(config.momentum, config.weight_decay)
    engine = DrawEngine(train.labels, train.num_classes)
    counts = train.class_counts
    fixed_weights = inv_freq_weights(counts) if config.loss == "inv_freq_ce" else None
    schedule = config.tau
    state = weights = distribution = None
    for epoch in range(epochs):
        if epoch % schedule.update_interval == 0:
            if epoch == 0 and not measured_start:
                state = ClassState.initial(train.num_classes)
            else:
                state = measure(model, validation, epoch)
            b = bias(state, schedule.epsilon)
            t = tau(schedule, b)
            weights = class_weights(state, t)
            record = snapshot_record(state, b, t, weights)
            record["stage"] = stage
            records.append(record)
            if on_snapshot is not None:
                extra = on_snapshot(model, record)
                if extra is not None:
                    records.append(extra)
            distribution = class_distribution(config.sampler_spec, state, t, counts)
        loss_weights = weights if config.loss in ("cdb_w_ce", "cdb_w_fl") else fixed_weights
        lr = learning_rate(config, epoch, lr0, epochs)
        records.append(train_epoch(model, config, train, loss_weights, distribution, epoch, optimizer,
                                   lr=lr, names=names, stage=stage, engine=engine))


def _final_record(model, splits, stage) -> tuple[dict, MetricsReport | None]:
    test = splits.get("test")
    if test is None or len(test) == 0:
        return {"event": "final", "stage": stage, "metrics": None}, None
    report = evaluate(model, test, train_counts=splits["train"].class_counts)
    return {"event": "final", "stage": stage, "metrics": report.to_dict()}, report


def run_training(config: TrainConfig, splits: dict, on_snapshot=None) -> TrainedRun:
    """Train end to end; ``splits`` maps ``train``/``validation``/``test`` to datasets."""
    train, validation = splits["train"], splits.get("validation")
    _check_splits(train, validation)
    if np.any(train.class_counts == 0):
        raise ConfigError(f"training split has empty classes: {np.flatnonzero(train.class_counts == 0).tolist()}")
    model = init_model(train.dims, train.num_classes, config.hidden_dim, [config.seed, 0])
    records = [{"event": "header", "schema": LOG_SCHEMA}]
    _train_stage(model, config, train, validation, stage=1, names=model.trainable("all"), lr0=config.lr,
                 epochs=config.epochs, measured_start=False, records=records, on_snapshot=on_snapshot)
    final, report = _final_record(model, splits, 1)
    records.append(final)
    return TrainedRun(model, records, report)


def run_decoupled(config: TrainConfig, splits: dict, on_snapshot=None) -> TrainedRun:
    """Stage 1 end to end, then cRT (fresh classifier) or LWS (per-class logit scales)."""
    stage2 = config.stage2
    if stage2 is None:
        raise ConfigError("decoupled training needs a stage2 section")
    if config.hidden_dim == 0:
        raise ConfigError("decoupled training needs hidden_dim >= 1")
    first = run_training(config, splits, on_snapshot)
    model = first.model.copy()
    if stage2.method == "crt":
        init_classifier(model, np.random.default_rng([config.seed, 2]))
        names = model.trainable("classifier")
    else:
        model.params["scales"] = np.ones(model.num_classes)
        names = model.trainable("scales")
    cfg2 = replace(config, loss=stage2.loss, sampler=stage2.sampler, epochs=stage2.epochs,
                   lr=config.lr if stage2.lr is None else stage2.lr, milestones=(), stage2=None)
    records = list(first.log)
    _train_stage(model, cfg2, splits["train"], splits["validation"], stage=2, names=names, lr0=cfg2.lr,
                 epochs=stage2.epochs, measured_start=True, records=records, on_snapshot=on_snapshot)
    final, report = _final_record(model, splits, 2)
    records.append(final)
    return TrainedRun(model, records, report, stage1_model=first.model)


def run(config: TrainConfig, splits: dict, on_snapshot=None) -> TrainedRun:
    return run_decoupled(config, splits, on_snapshot) if config.stage2 else run_training(config, splits, on_snapshot)
