"""Mean final best value of xNES vs GNN-xNES over several landscapes.

    python scripts/table1.py --dim 4 --seeds 0-19 --budget 20000 --out results/table1
"""

import argparse
from pathlib import Path

from gnnes.bench import SUMMARY_FIELDS, ExperimentConfig, format_table, run_experiment
from gnnes.cli import parse_seeds

LANDSCAPES = "styblinski,rastrigin,griewank,beale,cigar,rosenbrock,bent_cigar"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--seeds", default="0-19")
    p.add_argument("--budget", type=int, default=20_000)
    p.add_argument("--objectives", default=LANDSCAPES)
    p.add_argument("--algos", default="xnes,gnn-xnes")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/table1"))
    args = p.parse_args()

    seeds = tuple(parse_seeds(args.seeds))
    rows = []
    for objective in args.objectives.split(","):
        for algo in args.algos.split(","):
            cfg = ExperimentConfig(objective, args.dim, algo, seeds=seeds, budget=args.budget,
                                   out_dir=args.out, jobs=args.jobs)
            row = run_experiment(cfg)[1]
            rows.append(row)
            print(f"{objective:11s} {algo:9s} {row.mean_best_f:12.5g} +- {row.stderr:.2g}", flush=True)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "table1.tsv").write_text(format_table(rows, SUMMARY_FIELDS))


if __name__ == "__main__":
    main()
