"""Dataset preparation, single runs and sweeps on disk.

Layout under ``<output_root>/<experiment_id>/``::

    data/        train.csv validation.csv test.csv, *.ids, manifest.json
    runs/<name>/ config.cfg log.jsonl model.bin model.json summary.json
    sweep/       <name>/ per run, manifest.json, report/
    report/      tables written by ``report``
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .data import (PRNG_NAME, ImbalanceProfile, LabeledDataset, imbalance_ratio, load_csv, load_idx,
                   make_exponential_longtail, make_gaussian_blobs, make_two_class_imbalance, restrict_classes,
                   split_balanced, write_csv)
from .errors import CdbError, ConfigError, DataError, TrainingError
from .evaluation import HardInstanceTracker, ShotGroups, evaluate, method_label, report_tables, write_report
from .model import save_checkpoint
from .trainer import run

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
MANIFEST_SCHEMA = "cdblt.manifest/1"


def experiment_dir(cfg: dict) -> Path:
    root = os.environ.get(cfgmod.OUTPUT_ROOT_ENV) or cfg["run.output_root"]
    return Path(root) / str(cfg["run.experiment_id"])


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# prepare


def _load_pool(cfg: dict, prefix: str = "") -> LabeledDataset | None:
    source = cfg["data.source"]
    if source == "gaussian":
        if prefix:
            return None
        n = int(cfg["data.num_classes"])
        return make_gaussian_blobs(n, int(cfg["data.dims"]), [int(cfg["data.pool_per_class"])] * n,
                                   float(cfg["data.separation"]), int(cfg["data.seed"]))
    if source == "idx":
        images, labels = cfg[f"data.{prefix}images"], cfg[f"data.{prefix}labels"]
        if prefix and not images:
            return None
        if not images or not labels:
            raise ConfigError("data.images and data.labels are required for the idx source")
        return load_idx(images, labels)
    if source == "csv":
        path = cfg[f"data.{prefix}csv"]
        if prefix and not path:
            return None
        if not path:
            raise ConfigError("data.csv is required for the csv source")
        return load_csv(path)
    raise ConfigError(f"unknown data.source {source!r}; valid: gaussian, idx, csv")


def prepare_splits(cfg: dict) -> tuple[dict, dict]:
    """Build train/validation/test from the configured source and protocol."""
    seed = int(cfg["data.seed"])
    pool = _load_pool(cfg)
    test_pool = _load_pool(cfg, "test_")
    protocol = cfg["data.protocol"]
    profile = None
    if protocol == "two_class":
        classes = [int(cfg["data.head_class"]), int(cfg["data.tail_class"])]
        pool = restrict_classes(pool, classes)
        test_pool = restrict_classes(test_pool, classes) if test_pool is not None else None
        profile = ImbalanceProfile("two_class_head_ratio", head_ratio=float(cfg["data.head_ratio"]),
                                   total_two_class=int(cfg["data.total_two_class"]))
    elif protocol == "exponential":
        profile = ImbalanceProfile("exponential", mu=float(cfg["data.mu"]), n_max=int(cfg["data.n_max"]))
    elif protocol != "none":
        raise ConfigError(f"unknown data.protocol {protocol!r}; valid: two_class, exponential, none")
    if pool.num_classes < 2:
        raise ConfigError("the source pool needs at least two classes")
    validation, rest = split_balanced(pool, int(cfg["data.val_per_class"]), seed + 1)
    if test_pool is None:
        test, rest = split_balanced(rest, int(cfg["data.test_per_class"]), seed + 2)
    else:
        test, _ = split_balanced(test_pool, int(cfg["data.test_per_class"]), seed + 2)
    if protocol == "two_class":
        train = make_two_class_imbalance(rest, profile, 0, 1, seed + 3)
    elif protocol == "exponential":
        train = make_exponential_longtail(rest, profile, seed + 3)
    else:
        train = rest
    splits = {"train": train, "validation": validation, "test": test}
    info = {
        "protocol": protocol,
        "profile": None if profile is None else {k: getattr(profile, k) for k in
                                                 ("kind", "head_ratio", "mu", "n_max", "total_two_class")},
        "seed": seed,
        "prng": PRNG_NAME,
        "num_classes": pool.num_classes,
        "class_counts": {k: v.class_counts.tolist() for k, v in splits.items()},
        "imbalance_ratio": imbalance_ratio(train.class_counts),
    }
    return splits, info


def write_splits(splits: dict, out_dir, info: dict, cfg: dict) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in SPLITS:
        ds = splits[name]
        write_csv(out_dir / f"{name}.csv", ds)
        (out_dir / f"{name}.ids").write_text("".join(f"{i}\n" for i in ds.ids))
        files[name] = {"csv": f"{name}.csv", "sha256": sha256_file(out_dir / f"{name}.csv"),
                       "ids": f"{name}.ids", "rows": len(ds)}
    data_keys = {k: v for k, v in cfg.items() if k.startswith("data.")}
    manifest = {"schema": MANIFEST_SCHEMA, "version": __version__, "config_hash": cfgmod.config_hash(data_keys),
                "config": data_keys, "files": files, **info}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_splits(data_dir) -> dict:
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no prepared splits in {data_dir} (run 'prepare' first)")
    manifest = json.loads(manifest_path.read_text())
    n = int(manifest["num_classes"])
    splits = {}
    for name in SPLITS:
        ds = load_csv(data_dir / f"{name}.csv", num_classes=n)
        ids = np.loadtxt(data_dir / f"{name}.ids", dtype=np.int64, ndmin=1) if len(ds) else None
        splits[name] = LabeledDataset(ds.features, ds.labels, n, ids)
    return splits


def verify_manifest(data_dir) -> bool:
    """Recompute the config hash and file checksums recorded by ``prepare``."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    if cfgmod.config_hash(manifest["config"]) != manifest["config_hash"]:
        return False
    return all(sha256_file(data_dir / f["csv"]) == f["sha256"] for f in manifest["files"].values())


# --------------------------------------------------------------------------
# runs


def run_label(cfg: dict) -> str:
    parts = [method_label(cfg["loss.kind"], cfg["sampler.kind"]), str(cfg["tau.schedule"]).replace(":", "")]
    if str(cfg["stage2.method"]) not in ("none", ""):
        parts += [str(cfg["stage2.method"]), method_label(cfg["stage2.loss"], cfg["stage2.sampler"])]
    return "_".join(parts)


def run_name(cfg: dict) -> str:
    if cfg.get("run.name"):
        return str(cfg["run.name"])
    return f"{run_label(cfg)}_s{cfg['train.seed']}"


def execute_run(cfg: dict, splits: dict, run_dir, label: str | None = None) -> dict:
    """Train one configuration and write its artifacts into ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.cfg").write_text(cfgmod.dumps(cfg))
    tcfg = cfgmod.train_config(cfg)
    hook = None
    if cfg["eval.track_hard"]:
        groups = ShotGroups.from_counts(splits["train"].class_counts, int(cfg["eval.many_threshold"]),
                                        int(cfg["eval.few_threshold"]))
        hook = HardInstanceTracker(splits["train"], tcfg.gamma, float(cfg["eval.hard_threshold"]), groups)
    try:
        result = run(tcfg, splits, on_snapshot=hook)
    except TrainingError as exc:
        dump = {"error": str(exc), "epoch": exc.epoch, "batch": exc.batch, "config": cfg,
                "params": {k: v.tolist() for k, v in (exc.params or {}).items()}}
        (run_dir / "error.json").write_text(json.dumps(dump, indent=2, sort_keys=True) + "\n")
        raise
    (run_dir / "log.jsonl").write_text(result.log_lines())
    chash = cfgmod.config_hash(cfg)
    save_checkpoint(result.model, run_dir / "model", seed=tcfg.seed, config_hash=chash)
    groups = ShotGroups.from_counts(splits["train"].class_counts, int(cfg["eval.many_threshold"]),
                                    int(cfg["eval.few_threshold"]))
    head_k = cfgmod._none(cfg["eval.head_k"])
    report = evaluate(result.model, splits["test"], splits["train"].class_counts, groups,
                      None if head_k is None else int(head_k))
    summary = {"label": label or run_label(cfg), "params": cfg, "seed": tcfg.seed,
               "num_classes": splits["train"].num_classes, "config_hash": chash, "metrics": report.to_dict()}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def derived_seed(base_seed: int, params: dict) -> int:
    key = json.dumps(sorted(params.items()), sort_keys=True).encode("utf-8")
    return (int(base_seed) + int(hashlib.sha256(key).hexdigest()[:8], 16)) % (2 ** 31)


def expand_sweep(cfg: dict, sweep: dict) -> list[tuple[str, dict, dict]]:
    """Cartesian product of sweep groups times replicate seeds.

    ``sweep`` maps key tuples to lists of value tuples (see
    ``config.parse_sweep``). Returns ``(label, swept_params, full_config)``.
    """
    groups = list(sweep.items())
    seeds = cfg["run.seeds"] if isinstance(cfg["run.seeds"], list) else [cfg["run.seeds"]]
    out = []
    for combo in itertools.product(*(values for _, values in groups)):
        params = {}
        for (keys, _), values in zip(groups, combo):
            params.update(zip(keys, values))
        label = ",".join(f"{k}={v}" for k, v in params.items()) or "baseline"
        for base in seeds:
            full = dict(cfg)
            full.update(params)
            full["train.seed"] = derived_seed(base, params)
            full["run.name"] = ""
            out.append((label, params, full))
    return out


def _sweep_worker(job):
    index, label, full, data_dir, run_dir = job
    try:
        splits = read_splits(data_dir)
        summary = execute_run(full, splits, run_dir, label)
        return index, "ok", None, summary
    except CdbError as exc:
        return index, "failed", f"{type(exc).__name__}: {exc}", None
    except Exception as exc:  # keep the sweep going; the manifest records it
        return index, "failed", f"{type(exc).__name__}: {exc}", None


def run_sweep(cfg: dict, sweep: dict, data_dir, out_dir, jobs: int = 1) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = expand_sweep(cfg, sweep)
    work = [(i, label, full, str(data_dir), str(out_dir / f"r{i:03d}_{run_name(full)}"))
            for i, (label, _, full) in enumerate(plan)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, work))
    else:
        results = [_sweep_worker(w) for w in work]
    results.sort(key=lambda r: r[0])
    runs, summaries = [], []
    for (i, status, error, summary), (label, params, full) in zip(results, plan):
        runs.append({"index": i, "label": label, "params": params, "seed": full["train.seed"],
                     "dir": Path(work[i][4]).name, "status": status, "error": error})
        if summary is not None:
            summaries.append(summary)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "experiment_id": cfg["run.experiment_id"],
        "config_hash": cfgmod.config_hash(cfg),
        "seeds": cfg["run.seeds"],
        "output_dir": str(out_dir),
        "version": __version__,
        "sweep": {",".join(k): [list(v) for v in vals] for k, vals in sweep.items()},
        "runs": runs,
    }
    (out_dir / "base.cfg").write_text(cfgmod.dumps(cfg))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if summaries:
        tables, summary = report_tables(summaries)
        write_report(tables, summary, out_dir / "report")
    return manifest


def collect_summaries(root) -> list[dict]:
    return [json.loads(p.read_text()) for p in sorted(Path(root).rglob("summary.json"))
            if p.parent.name != "report"]
