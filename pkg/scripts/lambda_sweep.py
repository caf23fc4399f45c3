"""Sweep lambda1 = lambda2 on the single-block instance over several solver seeds."""

import argparse

import numpy as np

from peel.blockinv import PenaltyConfig, invert_block
from peel.presets import single_block_instance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0, 10, 1e2, 1e3, 1e4, 1e5])
    ap.add_argument("--seeds", type=int, default=5, help="solver seeds per value")
    ap.add_argument("--instance", type=int, default=0)
    args = ap.parse_args()

    block, x, y = single_block_instance(args.instance)
    print(f"{'lambda':>8}  {'seed 0':>9}  {'mean':>9}  {'std':>9}")
    for lam in args.lambdas:
        errs = [
            invert_block(y, block, PenaltyConfig(lambda1=lam, lambda2=lam, seed=s), x_true=x)[1].relative_error
            for s in range(args.seeds)
        ]
        print(f"{lam:8g}  {errs[0]:9.2e}  {np.mean(errs):9.2e}  {np.std(errs):9.2e}")


if __name__ == "__main__":
    main()
