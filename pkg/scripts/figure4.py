"""Convergence curves of xNES vs GNN-xNES on Rosenbrock and Bent Cigar.

Writes one curves TSV per landscape (median and quartiles of best-so-far
against function evaluations) and, with ``--plot``, a PNG per landscape.

    python scripts/figure4.py --dim 2 --seeds 0-9 --budget 10000 --out results/figure4
"""

import argparse
from pathlib import Path

from gnnes.bench import ExperimentConfig, run_experiment, write_curves
from gnnes.cli import parse_seeds


def plot(rows, path, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for algo in dict.fromkeys(r[0] for r in rows):
        pts = [r for r in rows if r[0] == algo]
        evals = [r[1] for r in pts]
        ax.plot(evals, [r[2] for r in pts], label=algo)
        ax.fill_between(evals, [r[3] for r in pts], [r[4] for r in pts], alpha=0.25)
    ax.set_yscale("log")
    ax.set_xlabel("function evaluations")
    ax.set_ylabel("best value so far")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--seeds", default="0-9")
    p.add_argument("--budget", type=int, default=10_000)
    p.add_argument("--objectives", default="rosenbrock,bent_cigar")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/figure4"))
    p.add_argument("--plot", action="store_true", help="also write PNGs (needs matplotlib)")
    args = p.parse_args()

    seeds = tuple(parse_seeds(args.seeds))
    args.out.mkdir(parents=True, exist_ok=True)
    for objective in args.objectives.split(","):
        records = []
        for algo in ("xnes", "gnn-xnes"):
            cfg = ExperimentConfig(objective, args.dim, algo, seeds=seeds, budget=args.budget,
                                   out_dir=args.out, jobs=args.jobs)
            records += run_experiment(cfg)[0]
        stem = f"{objective}_d{args.dim}"
        rows = write_curves(records, args.out / f"{stem}_curves.tsv")
        for algo in ("xnes", "gnn-xnes"):
            final = [r for r in rows if r[0] == algo][-1]
            print(f"{stem} {algo:9s} median best-f at {final[1]} evals: {final[2]:.4g}")
        if args.plot:
            plot(rows, args.out / f"{stem}.png", f"{objective}, d={args.dim}")


if __name__ == "__main__":
    main()
