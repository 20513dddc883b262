"""Overfitting run: weak sequential plant, small set, 60 GNN epochs without early stopping.

    python scripts/train_dynamics.py [--seed 0] [--log dynamics_log.csv]
"""

import argparse

from roadsafety.config import load_config
from roadsafety.experiments import train_dynamics
from roadsafety.nn.train import write_log


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--log", help="write the per-epoch log CSV here")
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    v = train_dynamics(cfg)
    for row in v.numbers["log"][9::10]:
        print(f"epoch {row.epoch:3d}  loss {row.loss:.4f}  train {row.train_auc:.4f}  val {row.val_auc:.4f}  test {row.test_auc:.4f}")
    print(v.line())
    if args.log:
        write_log(args.log, v.numbers["log"])


if __name__ == "__main__":
    main()
