"""Compare PEEL on a plain (non-residual) stack against a residual one of the same shape."""

import argparse

import numpy as np

from peel.blockinv import PenaltyConfig
from peel.forward import network_forward
from peel.modelio import InitScheme, build_custom, random_init
from peel.pipeline import peel


def stack(kind, depth, channels, size):
    blocks = [{"type": kind, "out_channels": channels, "name": f"{kind}{i}"} for i in range(depth)]
    return build_custom({"input_dims": [channels, size, size], "blocks": blocks})


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--trials", type=int, default=3)
    args = ap.parse_args()

    for kind in ("plain", "residual"):
        errs = []
        for seed in range(args.trials):
            net = random_init(stack(kind, args.depth, args.channels, args.size), InitScheme("uniform", seed=seed))
            x = np.random.default_rng(700 + seed).standard_normal(net.input_dims)
            tr = network_forward(x, net)
            errs.append(peel(tr.final, net, PenaltyConfig(seed=seed), truth=tr).metrics["relative_error"])
        print(f"{kind:>8}: input relative error {np.mean(errs):.3e} +- {np.std(errs):.3e}")


if __name__ == "__main__":
    main()
