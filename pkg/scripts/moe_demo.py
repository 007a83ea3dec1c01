#!/usr/bin/env python3
"""Train the expert-routing gate on synthetic clusters and report accuracy.

Runs the same demo as ``figforge moe-demo`` but prints the metrics with
indentation for reading at the terminal.
"""

import argparse
import json

from figforge.moe import run_demo


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--experts", type=int, default=3)
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--per-expert", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=1000)
    ap.add_argument("--lr", type=float, default=5e-5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = run_demo(
        num_experts=args.experts,
        k=args.k,
        hidden_dim=args.dim,
        per_expert=args.per_expert,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
    )
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
