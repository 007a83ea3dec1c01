#!/usr/bin/env python3
"""Drive the full offline pipeline on generated inputs.

Builds a demo PDF, extracts its figures, loads them into a corpus store,
splits and exports the corpus, and writes token and resolution reports.
The harvest and refine stages need live endpoints, so they are skipped;
everything here runs without the network.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from make_demo_pdf import build

from figforge.cli import main as cli


def step(argv):
    print(f"$ figforge {' '.join(argv)}", file=sys.stderr)
    code = cli(argv)
    if code != 0:
        raise SystemExit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="pipeline_demo")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    wd = args.workdir
    os.makedirs(wd, exist_ok=True)

    pdf = os.path.join(wd, "demo.pdf")
    build(pdf, pages=2, seed=args.seed)

    pairs = os.path.join(wd, "pairs")
    store = os.path.join(wd, "store")
    export = os.path.join(wd, "export")
    reports = os.path.join(wd, "reports")

    step(["extract-pdf", "--pdf", pdf, "--out", pairs, "--doc-id", "demo"])
    step(["corpus", "add", "--store", store, "--from-pairs", pairs])
    step(["corpus", "split", "--store", store, "--ratio", "0.75", "--seed", str(args.seed)])
    step(["corpus", "export", "--store", store, "--out", export, "--name", "demo"])
    step(["corpus", "stats", "--store", store])
    step(["stats", "tokens", "--corpus", store, "--out", reports])
    step(["stats", "resolutions", "--corpus", store, "--out", reports])
    print(f"pipeline artifacts under {wd}/", file=sys.stderr)


if __name__ == "__main__":
    main()
