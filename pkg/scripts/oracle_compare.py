"""Penalty solver against exact pattern enumeration on tiny blocks: accuracy and time."""

import argparse
import time

import numpy as np

from peel.blockinv import PenaltyConfig, exact_objective, invert_block
from peel.forward import resblock_forward
from peel.modelio import InitScheme, build_custom, random_init
from peel.oracle import oracle_invert_block


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--dims", type=int, nargs=3, default=[3, 2, 2], help="C H W; hidden size is C*H*W")
    ap.add_argument("--tol", type=float, default=1e-10, help="early-stop tolerance, 0 runs every epoch")
    args = ap.parse_args()

    cfg = PenaltyConfig(tol=args.tol or None)
    t_pen = t_orc = 0.0
    for seed in range(args.instances):
        spec = build_custom({"input_dims": args.dims, "blocks": [{"out_channels": args.dims[0]}]})
        b = random_init(spec, InitScheme("uniform", seed=seed)).blocks[0]
        x = np.random.default_rng(5000 + seed).standard_normal(b.in_dims)
        y = resblock_forward(x, b)
        t = time.perf_counter()
        ref = oracle_invert_block(y, b)
        t_orc += time.perf_counter() - t
        t = time.perf_counter()
        xh, rep = invert_block(y, b, cfg)
        t_pen += time.perf_counter() - t
        gap = exact_objective(y, b, xh) - ref.objective
        dist = np.linalg.norm(xh - ref.x) / np.linalg.norm(ref.x)
        print(f"{seed:3d}  gap {gap:9.2e}  distance {dist:9.2e}  injective {ref.injective}  iterations {rep.iterations}")
    print(f"total time: oracle {t_orc:.1f} s, penalty {t_pen:.1f} s")


if __name__ == "__main__":
    main()
