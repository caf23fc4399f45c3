"""Settings for the desk-scale reproduction runs.

The desk network keeps the ResNet-18 layout (7x7 stride-2 stem, four stages
of two basic blocks, no pooling, 64x64 RGB input) but changes two things so
that every block is invertible and the stem is overdetermined:

* stage-entry blocks downsample the shortcut with a fixed space-to-depth map,
  which needs each stage four times wider than the previous one;
* the stem emits 16 channels, so widths are 16, 64, 256, 1024.

Weights use the framework-default uniform init; the first convolution is
scaled by 1/64 so features stay of order one on the 0-255 pixel scale.
"""

from __future__ import annotations

import numpy as np

from .blockinv import PenaltyConfig
from .forward import network_forward
from .modelio import InitScheme, NetworkSpec, build_arch, build_custom, random_init
from .shallowinv import ShallowConfig

DESK_WIDTHS = (16, 64, 256, 1024)
DESK_INPUT = (3, 64, 64)
DESK_INPUT_SCALE = 1.0 / 64.0
# total-variation exponent 1 with light weights: the setting that met the
# image-error target on the width-16 stem
DESK_SHALLOW = dict(lambda_alpha=1e-7, lambda_tv=1e-6, beta=1.0)


def desk_resnet18(seed=0) -> NetworkSpec:
    spec = build_arch("resnet18", DESK_INPUT, pooling=False, widths=DESK_WIDTHS, shortcut="space_to_depth")
    return random_init(spec, InitScheme("uniform", seed=seed, input_scale=DESK_INPUT_SCALE))


def desk_configs(seed=0, **overrides):
    """Block and image solver configs for one desk run."""
    block = PenaltyConfig(seed=seed, **overrides)
    shallow = ShallowConfig(seed=seed, **DESK_SHALLOW)
    return block, shallow


def single_block_instance(seed=0, channels=5, size=8):
    """A random residual block and a Gaussian input, as used for the single-block study."""
    spec = build_custom({"input_dims": [channels, size, size], "blocks": [{"out_channels": channels, "name": "block"}]})
    net = random_init(spec, InitScheme("uniform", seed=seed))
    x = np.random.default_rng(seed + 10_000).standard_normal((channels, size, size))
    block = net.blocks[0]
    return block, x, network_forward(x, net).final

