"""Multi-seed experiment harness: run, summarize, and build convergence curves.

For a given seed the landscape instance (translation, rotation) and the
initial latent mean come from one child of ``SeedSequence(seed)`` and the
algorithm's randomness from another, so every algorithm sees the same
problem and the same starting distribution.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .driver import DriverConfig, RunRecord, config_dict, run
from .latent import PGES, XNES
from .objectives import OBJECTIVES, make_objective

ALGORITHMS = ("xnes", "pges", "gnn-xnes")

SUMMARY_FIELDS = ("objective", "dim", "algorithm", "mean_best_f", "stderr", "mean_gap",
                  "seeds", "evaluations", "budget")
CURVE_FIELDS = ("algorithm", "evaluations", "median", "q25", "q75", "runs")


@dataclass(frozen=True)
class ExperimentConfig:
    objective: str
    dim: int
    algorithm: str
    seeds: tuple[int, ...] = (0,)
    budget: int = 10_000
    driver: DriverConfig = field(default_factory=DriverConfig)
    pges_lr: float = 1e-3
    out_dir: Path | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise KeyError(f"unknown objective {self.objective!r}")
        if self.algorithm not in ALGORITHMS:
            raise KeyError(f"unknown algorithm {self.algorithm!r}")
        if not self.seeds:
            raise ValueError("seed list is empty")
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


@dataclass(frozen=True)
class SummaryRow:
    objective: str
    dim: int
    algorithm: str
    mean_best_f: float
    stderr: float
    mean_gap: float
    seeds: int
    evaluations: float
    budget: int


def problem_instance(objective: str, dim: int, seed: int):
    """Landscape, initial latent mean and algorithm generator for ``seed``."""
    problem_ss, algo_ss = np.random.SeedSequence(seed).spawn(2)
    problem_rng = np.random.default_rng(problem_ss)
    spec = make_objective(objective, dim, problem_rng)
    init_mean = problem_rng.uniform(-2.0, 2.0, size=dim)
    return spec, init_mean, np.random.default_rng(algo_ss)


def run_seed(cfg: ExperimentConfig, seed: int) -> RunRecord:
    spec, init_mean, algo_rng = problem_instance(cfg.objective, cfg.dim, seed)
    driver = cfg.driver
    if driver.max_evaluations is None:
        from dataclasses import replace
        driver = replace(driver, max_evaluations=cfg.budget)
    optimizer = PGES(cfg.pges_lr) if cfg.algorithm == "pges" else XNES()
    meta = {
        "algorithm": cfg.algorithm,
        "seed": seed,
        "budget": cfg.budget,
        "optimal_value": spec.optimal_value,
        "driver": config_dict(driver),
    }
    return run(spec, driver, optimizer, rng=algo_rng, init_mean=init_mean,
               use_flow=cfg.algorithm.startswith("gnn-"), meta=meta)


def record_filename(rec: RunRecord) -> str:
    m = rec.meta
    return f"{m['objective']}_d{m['dim']}_{m['algorithm']}_seed{m['seed']}.jsonl"


def run_experiment(cfg: ExperimentConfig) -> tuple[list[RunRecord], SummaryRow]:
    """One run per seed; records are written under ``out_dir/records`` if set."""
    if cfg.jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        records = [run_seed(cfg, s) for s in cfg.seeds]
    if cfg.out_dir is not None:
        rec_dir = Path(cfg.out_dir) / "records"
        rec_dir.mkdir(parents=True, exist_ok=True)
        for rec in records:
            (rec_dir / record_filename(rec)).write_text(rec.to_jsonl())
    return records, summarize(records)[0]


def load_records(paths) -> list[RunRecord]:
    files = []
    for p in paths:
        p = Path(p)
        files.extend(sorted(p.rglob("*.jsonl")) if p.is_dir() else [p])
    return [RunRecord.from_jsonl(f.read_text()) for f in files]


def summarize(records) -> list[SummaryRow]:
    """One row per (objective, dim, algorithm) group, in first-seen order."""
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in records:
        key = (rec.meta["objective"], rec.meta["dim"], rec.meta["algorithm"])
        groups.setdefault(key, []).append(rec)
    rows = []
    for (objective, dim, algorithm), recs in groups.items():
        finals = np.array([r.best_f for r in recs], dtype=float)
        n = finals.size
        stderr = float(finals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        opt = recs[0].meta.get("optimal_value", 0.0)
        evals = float(np.mean([r.rows[-1]["evaluations"] if r.rows else 0 for r in recs]))
        rows.append(SummaryRow(objective, int(dim), algorithm, float(finals.mean()), stderr,
                               float(finals.mean() - opt), n, evals,
                               int(recs[0].meta.get("budget", 0))))
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_table(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        values = row if isinstance(row, (tuple, list)) else [getattr(row, f) for f in fields]
        w.writerow([_fmt(v) for v in values])
    return buf.getvalue()


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def best_so_far_on_grid(rec: RunRecord, grid) -> np.ndarray:
    """Best-so-far value at each grid point; NaN before the first generation.

    After the last logged generation the final value is carried forward.
    """
    evals = rec.column("evaluations")
    best = np.minimum.accumulate(rec.column("best_f"))
    idx = np.searchsorted(evals, grid, side="right") - 1
    out = np.where(idx >= 0, best[np.clip(idx, 0, None)], np.nan)
    return out


def emit_curves(records, grid=None) -> list[tuple]:
    """Median and quartiles of best-so-far per algorithm on a shared grid.

    The default grid is the union of all logged evaluation counts.
    """
    if grid is None:
        grid = np.unique(np.concatenate([r.column("evaluations") for r in records]))
    grid = np.asarray(grid, dtype=float)
    by_algo: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_algo.setdefault(rec.meta["algorithm"], []).append(rec)
    rows = []
    for algo, recs in by_algo.items():
        mat = np.vstack([best_so_far_on_grid(r, grid) for r in recs])
        for j, g in enumerate(grid):
            col = mat[:, j]
            col = col[~np.isnan(col)]
            if col.size == 0:
                continue
            q25, med, q75 = np.percentile(col, [25, 50, 75])
            rows.append((algo, int(g), float(med), float(q25), float(q75), int(col.size)))
    return rows


def write_curves(records, path, grid=None) -> list[tuple]:
    rows = emit_curves(records, grid)
    Path(path).write_text(format_table(rows, CURVE_FIELDS))
    return rows


def write_summary(rows, path) -> None:
    Path(path).write_text(format_table(rows, SUMMARY_FIELDS))
