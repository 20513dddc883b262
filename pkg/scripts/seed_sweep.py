"""Test macro-AUC of each model across several pipeline seeds (spread of the benchmark).

    python scripts/seed_sweep.py --seeds 0 1 2 --models logistic ffnn gnn
"""

import argparse
from dataclasses import replace

import numpy as np

from roadsafety.config import MODEL_KINDS, load_config
from roadsafety.pipeline import run_benchmark


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--models", nargs="+", choices=MODEL_KINDS, default=list(MODEL_KINDS))
    args = ap.parse_args()
    base = load_config(args.config)
    table = {m: [] for m in args.models}
    for seed in args.seeds:
        auc = run_benchmark(replace(base, seed=seed), args.models).test_auc()
        print(f"seed {seed}: " + " ".join(f"{m}={auc[m]:.4f}" for m in args.models), flush=True)
        for m in args.models:
            table[m].append(auc[m])
    for m, vals in table.items():
        print(f"{m:9s} mean {np.mean(vals):.4f}  min {np.min(vals):.4f}  max {np.max(vals):.4f}")


if __name__ == "__main__":
    main()
