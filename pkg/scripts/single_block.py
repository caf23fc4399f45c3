"""Invert one random 5x8x8 residual block and print the error curve."""

import argparse
import time

import numpy as np

from peel.blockinv import PenaltyConfig, solve
from peel.presets import single_block_instance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0, help="instance seed")
    ap.add_argument("--solver-seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--every", type=int, default=100, help="print interval")
    args = ap.parse_args()

    block, x, y = single_block_instance(args.seed)
    cfg = PenaltyConfig(epochs=args.epochs, seed=args.solver_seed)
    xnorm = np.linalg.norm(x)

    def show(state):
        if state.step % args.every == 0:
            err = np.linalg.norm(state.x - x) / xnorm
            print(f"{state.step:6d}  objective {state.trace[-1]:.3e}  relative error {err:.3e}")

    t = time.perf_counter()
    _, rep, _ = solve(y, block, cfg, x_true=x, callback=show)
    print(f"final relative error {rep.relative_error:.3e} in {time.perf_counter() - t:.1f} s")


if __name__ == "__main__":
    main()
