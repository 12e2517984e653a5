#!/usr/bin/env python3
"""Train the cloner on growing task subsets and evaluate on the whole suite.

Writes --root/subset-train.csv; demos are generated on first use.
"""
import argparse
from pathlib import Path

from rftsim.cli import main as cli


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--root", default="runs/subsets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sizes", default="1,4,8,12")
    args = p.parse_args()
    common = ["--seed", str(args.seed), "--workers", str(args.workers), "--store", f"{args.root}/store",
              "--out", args.root]
    if not (Path(args.root) / "store" / "refs").exists():
        cli(common + ["gen-demos", "--until-success", "60"])
    raise SystemExit(cli(common + ["subset-train", "--sizes", args.sizes, "--trials", "2"]))


if __name__ == "__main__":
    main()
