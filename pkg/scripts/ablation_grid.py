#!/usr/bin/env python3
"""Control-mode x horizon sweep of the cloner on the task suite.

Generates demos into --root/store when absent, then writes
--root/ablation.csv.  Extra arguments are passed to ``rftsim ablate``.
"""
import argparse
from pathlib import Path

from rftsim.cli import main as cli


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--root", default="runs/ablation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    args, extra = p.parse_known_args()
    common = ["--seed", str(args.seed), "--workers", str(args.workers), "--store", f"{args.root}/store",
              "--out", args.root]
    if not (Path(args.root) / "store" / "refs").exists():
        cli(common + ["gen-demos", "--until-success", "60"])
    raise SystemExit(cli(common + ["ablate", "--modes", "receding_horizon,receding_temporal,temporal_ensemble",
                                   "--horizons", "8,16,32,50", "--episodes", "5"] + extra))


if __name__ == "__main__":
    main()
