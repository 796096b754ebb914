"""Flat ``section.key = value`` configuration files.

Values are JSON literals (numbers, ``true``/``false``, ``null``, quoted
strings, lists); anything that does not parse as JSON is kept as a bare
string, so ``loss.kind = cdb_w_ce`` and ``tau.schedule = fixed:1.5`` work
unquoted. ``#`` starts a comment. Unknown keys are errors.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .difficulty import TauSchedule
from .errors import ConfigError
from .trainer import Stage2Config, TrainConfig

# key -> (default, help)
SCHEMA = {
    "data.source": ("gaussian", "gaussian | idx | csv"),
    "data.images": ("", "IDX image file of the source pool"),
    "data.labels": ("", "IDX label file of the source pool"),
    "data.test_images": ("", "optional IDX image file the test split is drawn from"),
    "data.test_labels": ("", "optional IDX label file the test split is drawn from"),
    "data.csv": ("", "CSV source pool (label,f1,...,fD)"),
    "data.test_csv": ("", "optional CSV file the test split is drawn from"),
    "data.protocol": ("two_class", "two_class | exponential | none"),
    "data.head_ratio": (0.99, "head share of the two-class pool"),
    "data.head_class": (4, "source class used as head (two_class)"),
    "data.tail_class": (9, "source class used as tail (two_class)"),
    "data.total_two_class": (5000, "size of the two-class training pool"),
    "data.mu": (0.01, "tail/head count ratio of the exponential profile"),
    "data.n_max": (450, "head count of the exponential profile"),
    "data.val_per_class": (500, "balanced difficulty/validation samples per class"),
    "data.test_per_class": (800, "balanced test samples per class"),
    "data.num_classes": (2, "classes generated (gaussian source)"),
    "data.dims": (20, "feature dimension (gaussian source)"),
    "data.separation": (4.0, "distance between class centres (gaussian source)"),
    "data.pool_per_class": (6300, "samples generated per class (gaussian source)"),
    "data.seed": (0, "seed for generation and splitting"),
    "train.epochs": (50, ""),
    "train.batch_size": (100, ""),
    "train.lr": (0.01, "initial learning rate"),
    "train.momentum": (0.9, ""),
    "train.weight_decay": (5e-4, "L2 coefficient"),
    "train.lr_schedule": ("constant", "constant | step | cosine"),
    "train.milestones": ([], "epochs at which the step schedule decays"),
    "train.lr_factor": (0.1, "step schedule decay factor"),
    "train.hidden_dim": (32, "0 gives softmax regression"),
    "train.epoch_size": (None, "draws per epoch; null means the training-set size"),
    "train.seed": (0, ""),
    "loss.kind": ("ce", "ce | focal | cdb_w_ce | cdb_w_fl | inv_freq_ce"),
    "loss.gamma": (1.0, "focal exponent"),
    "sampler.kind": ("uniform", "uniform | class_frequency | class_aware | cdb_s"),
    "sampler.floor": (None, "per-class probability floor for cdb_s; null means 1e-4/N"),
    "tau.schedule": ("sigmoidal", "fixed:<v> | linear | polynomial[:p] | logarithmic | sigmoidal"),
    "tau.t_max": (5.0, "upper bound of dynamic tau"),
    "tau.epsilon": (0.01, "bias regulariser"),
    "tau.interval": (1, "epochs between difficulty snapshots"),
    "stage2.method": ("none", "none | crt | lws"),
    "stage2.loss": ("ce", "stage-2 loss kind"),
    "stage2.sampler": ("class_aware", "stage-2 sampler kind"),
    "stage2.epochs": (10, ""),
    "stage2.lr": (None, "null reuses train.lr"),
    "eval.many_threshold": (100, "training count above which a class is many-shot"),
    "eval.few_threshold": (20, "training count at or below which a class is few-shot"),
    "eval.head_k": (None, "head classes for the head/tail split; null means min(5, N//2)"),
    "eval.hard_threshold": (0.8, "weight above which an instance counts as hard"),
    "eval.track_hard": (False, "log hard-instance averages at every snapshot"),
    "run.experiment_id": ("exp", "experiment directory name"),
    "run.output_root": ("runs", "parent of experiment directories"),
    "run.name": ("", "run directory name; empty derives one from the config"),
    "run.seeds": ([0], "replicate seeds for sweeps"),
}

OUTPUT_ROOT_ENV = "CDBLT_OUTPUT_ROOT"


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = parse_value(value)
    return out


def parse_sweep(text: str, source: str = "<sweep>") -> dict:
    """Sweep files map keys to value lists.

    A comma-joined key (``loss.kind,sampler.kind``) takes a list of equally
    long lists whose entries move together. Returns ``{tuple_of_keys: [tuple, ...]}``.
    """
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        keys = tuple(k.strip() for k in key.split(","))
        if not sep or not all(keys):
            raise ConfigError(f"{source}:{lineno}: expected 'key = [values]'")
        for k in keys:
            if k not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown key {k!r}")
        values = parse_value(value)
        if not isinstance(values, list):
            raise ConfigError(f"{source}:{lineno}: sweep values must be a list")
        if len(keys) == 1:
            values = [(v,) for v in values]
        elif not all(isinstance(v, list) and len(v) == len(keys) for v in values):
            raise ConfigError(f"{source}:{lineno}: each entry must list {len(keys)} values")
        out[keys] = [tuple(v) for v in values]
    return out


def load_sweep(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"sweep file not found: {path}")
    return parse_sweep(path.read_text(encoding="utf-8"), str(path))


def load(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_text(path.read_text(encoding="utf-8"), str(path))


def resolve(overrides: dict | None = None) -> dict:
    cfg = {k: v for k, (v, _) in SCHEMA.items()}
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = value
    return cfg


def dumps(cfg: dict) -> str:
    return "".join(f"{k} = {json.dumps(cfg[k])}\n" for k in sorted(cfg))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dumps(cfg).encode("utf-8")).hexdigest()


def _none(v):
    return None if v in (None, "", "auto", "none", "null") else v


def train_config(cfg: dict) -> TrainConfig:
    try:
        tau = TauSchedule.parse(cfg["tau.schedule"], t_max=float(cfg["tau.t_max"]),
                                epsilon=float(cfg["tau.epsilon"]), update_interval=int(cfg["tau.interval"]))
        stage2 = None
        if str(cfg["stage2.method"]).lower() not in ("none", ""):
            lr2 = _none(cfg["stage2.lr"])
            stage2 = Stage2Config(str(cfg["stage2.method"]), str(cfg["stage2.loss"]), str(cfg["stage2.sampler"]),
                                  int(cfg["stage2.epochs"]), None if lr2 is None else float(lr2))
        floor = _none(cfg["sampler.floor"])
        epoch_size = _none(cfg["train.epoch_size"])
        return TrainConfig(
            epochs=int(cfg["train.epochs"]),
            batch_size=int(cfg["train.batch_size"]),
            lr=float(cfg["train.lr"]),
            momentum=float(cfg["train.momentum"]),
            weight_decay=float(cfg["train.weight_decay"]),
            lr_schedule=str(cfg["train.lr_schedule"]),
            milestones=tuple(cfg["train.milestones"] or ()),
            lr_factor=float(cfg["train.lr_factor"]),
            hidden_dim=int(cfg["train.hidden_dim"]),
            seed=int(cfg["train.seed"]),
            loss=str(cfg["loss.kind"]),
            gamma=float(cfg["loss.gamma"]),
            sampler=str(cfg["sampler.kind"]),
            sampler_floor=None if floor is None else float(floor),
            epoch_size=None if epoch_size is None else int(epoch_size),
            tau=tau,
            stage2=stage2,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
