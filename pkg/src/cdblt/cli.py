"""Command-line entry point: ``cdblt {prepare,train,sweep,report}``.

Any config key can be overridden as ``--section.key value``. Exit codes:
0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import config as cfgmod
from . import experiment as ex
from .errors import AggregationError, CdbError, ConfigError, DataError
from .evaluation import report_tables, write_report

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

SHORTHANDS = {"--loss": "loss.kind", "--tau": "tau.schedule", "--sampler": "sampler.kind",
              "--seed": "train.seed", "--epochs": "train.epochs"}


def _overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        flag = extra[i]
        key = SHORTHANDS.get(flag) or (flag[2:] if flag.startswith("--") else None)
        if key is None or key not in cfgmod.SCHEMA:
            raise ConfigError(f"unknown option {flag!r}")
        if i + 1 >= len(extra):
            raise ConfigError(f"option {flag} needs a value")
        out[key] = cfgmod.parse_value(extra[i + 1])
        i += 2
    return out


def _build_config(args, extra) -> dict:
    loaded = cfgmod.load(args.config) if args.config else {}
    loaded.update(_overrides(extra))
    cfg = cfgmod.resolve(loaded)
    # validate the training section early so bad names fail before any work
    cfgmod.train_config(cfg)
    return cfg


def cmd_prepare(cfg: dict) -> int:
    out = ex.experiment_dir(cfg) / "data"
    splits, info = ex.prepare_splits(cfg)
    manifest = ex.write_splits(splits, out, info, cfg)
    print(json.dumps({"data_dir": str(out), "class_counts": manifest["class_counts"],
                      "imbalance_ratio": manifest["imbalance_ratio"]}))
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    exp = ex.experiment_dir(cfg)
    splits = ex.read_splits(exp / "data")
    run_dir = exp / "runs" / ex.run_name(cfg)
    summary = ex.execute_run(cfg, splits, run_dir)
    m = summary["metrics"]
    print(json.dumps({"run_dir": str(run_dir), "error": 1.0 - m["top1"], "top1": m["top1"],
                      "macro_recall": m["macro_recall"]}))
    return EXIT_OK


def cmd_sweep(cfg: dict, sweep_path, jobs: int) -> int:
    exp = ex.experiment_dir(cfg)
    sweep = cfgmod.load_sweep(sweep_path) if sweep_path else {}
    manifest = ex.run_sweep(cfg, sweep, exp / "data", exp / "sweep", jobs)
    failed = [r for r in manifest["runs"] if r["status"] != "ok"]
    print(json.dumps({"sweep_dir": manifest["output_dir"], "runs": len(manifest["runs"]), "failed": len(failed)}))
    for r in failed:
        print(f"run {r['dir']} failed: {r['error']}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_report(cfg: dict, source) -> int:
    exp = ex.experiment_dir(cfg)
    root = Path(source) if source else exp
    summaries = ex.collect_summaries(root)
    if not summaries:
        raise AggregationError(f"no run summaries found under {root}")
    tables, summary = report_tables(summaries)
    out = exp / "report"
    write_report(tables, summary, out)
    print(tables["methods"], end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdblt", description=__doc__.splitlines()[0],
                                     epilog="Config keys are listed by 'cdblt keys'.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("prepare", "build train/validation/test splits"),
                        ("train", "train one configuration"),
                        ("sweep", "run a Cartesian sweep and aggregate tables"),
                        ("report", "aggregate run summaries into tables")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", "-c", help="flat key = value config file")
        if name == "sweep":
            p.add_argument("--sweep", help="file mapping config keys to value lists")
            p.add_argument("--jobs", type=int, default=1)
        if name == "report":
            p.add_argument("--source", help="directory to scan for run summaries (default: experiment dir)")
    sub.add_parser("keys", help="list config keys with defaults")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "keys":
            for key, (default, help_) in cfgmod.SCHEMA.items():
                print(f"{key} = {json.dumps(default)}" + (f"    # {help_}" if help_ else ""))
            return EXIT_OK
        cfg = _build_config(args, extra)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.sweep, args.jobs)
        return cmd_report(cfg, args.source)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CdbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
