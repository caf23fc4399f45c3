"""Layer-wise inversion of residual networks from their output features."""

__version__ = "0.1.0"

from .blockinv import PenaltyConfig, invert_block, penalty_objective
from .forward import network_forward, resblock_forward
from .modelio import InitScheme, NetworkSpec, ResBlockSpec, build_arch, load_model, random_init, save_model
from .pipeline import PeelRun, invert_nonresidual, peel
from .shallowinv import ShallowConfig, invert_shallow

__all__ = [
    "InitScheme",
    "NetworkSpec",
    "PeelRun",
    "PenaltyConfig",
    "ResBlockSpec",
    "ShallowConfig",
    "build_arch",
    "invert_block",
    "invert_nonresidual",
    "invert_shallow",
    "load_model",
    "network_forward",
    "peel",
    "penalty_objective",
    "random_init",
    "resblock_forward",
    "save_model",
]
