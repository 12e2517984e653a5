#!/usr/bin/env python3
"""Run the pinned reference experiment and print its per-round scores.

Noisy-expert demos bootstrap a nearest-neighbour cloner; three RFT rounds of
400 rollouts follow.  Everything lands under --root.
"""
import argparse
import logging
import time

from rftsim.cli import main as cli
from rftsim.reference import REFERENCE_SEED, run_reference


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--root", default="runs/reference")
    p.add_argument("--seed", type=int, default=REFERENCE_SEED)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    t0 = time.perf_counter()
    ref = run_reference(args.root, seed=args.seed, workers=args.workers)
    for rnd, q, s in ref.rft.scores():
        print(f"round {rnd}: validation qscore {q:.4f}  success {s:.4f}")
    first, last = ref.rft.registry.entries[0], ref.rft.registry.entries[-1]
    print(f"gain in success rate: {float(last.success - first.success):+.4f}")
    print(f"elapsed {time.perf_counter() - t0:.0f}s")
    cli(["--out", f"{args.root}/rft", "best-of", "--run", f"{args.root}/rft"])
    cli(["--store", f"{args.root}/store", "--out", f"{args.root}/report", "report", "--run", f"{args.root}/rft"])


if __name__ == "__main__":
    main()
