#!/usr/bin/env python3
"""Closed-loop versus open-loop execution when an object moves mid-episode.

The scripted expert runs on the packaged drift scenario under receding
horizon (H=8..50), temporal ensembling and a single open-loop plan
(horizon 0).  Results are written to --root/ablation.csv.
"""
import argparse

from rftsim.cli import main as cli


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--root", default="runs/drift")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=20)
    args = p.parse_args()
    raise SystemExit(cli(["--seed", str(args.seed), "--store", f"{args.root}/store", "--out", args.root, "ablate",
                          "--scenario", "drift", "--modes", "receding_horizon,temporal_ensemble",
                          "--horizons", "0,8,16,32,50", "--episodes", str(args.episodes)]))


if __name__ == "__main__":
    main()
