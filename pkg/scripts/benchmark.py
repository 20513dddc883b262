"""Train all four models on the synthetic set, then rerun GNN vs logistic without the sequential plant.

    python scripts/benchmark.py [--config configs/default.yaml] [--seed 0] [--json results.json]
"""

import argparse
import json
import logging

from roadsafety.config import load_config
from roadsafety.experiments import ablation, benchmark


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--skip-ablation", action="store_true")
    ap.add_argument("--json", help="write test AUCs here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed

    results = {}
    v = benchmark(cfg)
    print(v.line())
    results["benchmark"] = v.numbers["test_auc"]
    if not args.skip_ablation:
        a = ablation(cfg)
        print(a.line())
        results["ablation"] = a.numbers["test_auc"]
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"seed": cfg.seed, **results}, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
