"""Command-line entry point: ``gnnes run | summarize | curves``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .bench import (ALGORITHMS, ExperimentConfig, load_records, run_experiment, summarize,
                    write_curves, write_summary)
from .driver import DriverConfig
from .objectives import OBJECTIVES

log = logging.getLogger("gnnes")

# flag name -> DriverConfig field
_DRIVER_FLAGS = {
    "pop": "population_size",
    "kl_radius": "kl_radius",
    "kl_samples": "kl_sample_size",
    "inner_steps": "inner_steps",
    "inner_lr": "inner_lr",
    "fitness_mode": "fitness_mode",
}

_RUN_DEFAULTS = {"dim": 2, "algo": "gnn-xnes", "seeds": "0", "budget": 10_000, "out": "results",
                 "jobs": 1, "pges_lr": 1e-3}


def parse_seeds(text) -> list[int]:
    """``"0-4,7"`` -> ``[0, 1, 2, 3, 4, 7]``; lists of ints pass through."""
    if isinstance(text, (list, tuple)):
        return [int(s) for s in text]
    if isinstance(text, int):
        return [text]
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gnnes", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one or more algorithms over a list of seeds")
    # defaults are None so that config-file values can be told apart from flags
    r.add_argument("--config", type=Path, help="JSON file with any of the options below")
    r.add_argument("--objective")
    r.add_argument("--dim", type=int)
    r.add_argument("--algo", help=f"comma-separated subset of {', '.join(ALGORITHMS)}")
    r.add_argument("--seeds", help="e.g. 0-9 or 1,4,5")
    r.add_argument("--budget", type=int, help="evaluations per run")
    r.add_argument("--pop", type=int, help="population size (default 10*dim)")
    r.add_argument("--kl-radius", type=float)
    r.add_argument("--kl-samples", type=int)
    r.add_argument("--inner-steps", type=int)
    r.add_argument("--inner-lr", type=float)
    r.add_argument("--fitness-mode", choices=("shaped", "raw"))
    r.add_argument("--pges-lr", type=float)
    r.add_argument("--jobs", type=int, help="parallel seed workers")
    r.add_argument("--out", help="output directory")

    s = sub.add_parser("summarize", help="summary table from record files")
    s.add_argument("records", nargs="+", type=Path)
    s.add_argument("--out", type=Path, default=None, help="TSV path (default: stdout)")

    c = sub.add_parser("curves", help="median/quartile best-so-far curves from record files")
    c.add_argument("records", nargs="+", type=Path)
    c.add_argument("--out", type=Path, required=True)
    return p


def _merge_run_options(args, parser) -> dict:
    opts = dict(_RUN_DEFAULTS)
    driver_extra = {}
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        driver_extra = cfg.pop("driver", {}) or {}
        opts.update({k.replace("-", "_"): v for k, v in cfg.items()})
    for key, value in vars(args).items():
        if key not in ("command", "config", "verbose") and value is not None:
            opts[key] = value
    opts["driver_extra"] = driver_extra
    return opts


def _experiment_configs(opts, parser) -> list[ExperimentConfig]:
    if not opts.get("objective"):
        parser.error("--objective is required")
    if opts["objective"] not in OBJECTIVES:
        parser.error(f"unknown objective {opts['objective']!r}; choose from {', '.join(OBJECTIVES)}")
    algos = [a.strip() for a in str(opts["algo"]).split(",") if a.strip()]
    for a in algos:
        if a not in ALGORITHMS:
            parser.error(f"unknown algorithm {a!r}; choose from {', '.join(ALGORITHMS)}")
    try:
        seeds = parse_seeds(opts["seeds"])
    except ValueError:
        parser.error(f"cannot parse seeds {opts['seeds']!r}")
    if not seeds:
        parser.error("seed list is empty")
    if int(opts["dim"]) < 2:
        parser.error("--dim must be at least 2")

    known = {f.name for f in fields(DriverConfig)}
    driver_kw = {}
    for key, value in opts["driver_extra"].items():
        if key not in known:
            parser.error(f"unknown driver option {key!r} in config")
        driver_kw[key] = tuple(value) if key == "hidden" else value
    for flag, name in _DRIVER_FLAGS.items():
        if opts.get(flag) is not None:
            driver_kw[name] = opts[flag]
    try:
        driver = DriverConfig(**driver_kw)
    except (TypeError, ValueError) as exc:
        parser.error(str(exc))
    return [ExperimentConfig(objective=opts["objective"], dim=int(opts["dim"]), algorithm=a,
                             seeds=tuple(seeds), budget=int(opts["budget"]), driver=driver,
                             pges_lr=float(opts["pges_lr"]), out_dir=Path(opts["out"]),
                             jobs=int(opts["jobs"]))
            for a in algos]


def cmd_run(args, parser) -> int:
    configs = _experiment_configs(_merge_run_options(args, parser), parser)
    rows = []
    for cfg in configs:
        log.info("running %s on %s d=%d, %d seeds", cfg.algorithm, cfg.objective, cfg.dim,
                 len(cfg.seeds))
        _, row = run_experiment(cfg)
        rows.append(row)
        print(f"{row.algorithm:10s} {row.objective} d={row.dim}: mean best f = "
              f"{row.mean_best_f:.6g} +- {row.stderr:.2g} over {row.seeds} seeds")
    out = configs[0].out_dir
    write_summary(rows, out / "summary.tsv")
    return 0


def cmd_summarize(args) -> int:
    rows = summarize(load_records(args.records))
    if args.out is None:
        from .bench import SUMMARY_FIELDS, format_table
        sys.stdout.write(format_table(rows, SUMMARY_FIELDS))
    else:
        write_summary(rows, args.out)
    return 0


def cmd_curves(args) -> int:
    records = load_records(args.records)
    if not records:
        raise FileNotFoundError("no record files found")
    write_curves(records, args.out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args, parser)
        if args.command == "summarize":
            return cmd_summarize(args)
        return cmd_curves(args)
    except Exception as exc:  # runtime failure, not a usage error
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
