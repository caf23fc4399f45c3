"""Honest forward inference with feature taps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .modelio import NetworkSpec, PlainBlock, ResBlockSpec
from .tensor import as_tensor


@dataclass(frozen=True)
class TapTrace:
    """Features observed during one forward pass.

    ``stem_output`` is the input of the first block, ``block_outputs[l]`` is
    the output of block ``l`` (zero-based), ``final`` the last block output.
    """

    input: np.ndarray
    stem_output: np.ndarray
    block_outputs: tuple

    @property
    def final(self):
        return self.block_outputs[-1]

    def block_input(self, index):
        return self.stem_output if index == 0 else self.block_outputs[index - 1]

    def __len__(self):
        return len(self.block_outputs)


def _check_dims(x, dims, what):
    if tuple(x.shape) != tuple(dims):
        raise ShapeError(f"{what}: expected input of shape {tuple(dims)}, got {x.shape}")


def resblock_forward(x, block: ResBlockSpec) -> np.ndarray:
    x = as_tensor(x, "block input")
    _check_dims(x, block.in_dims, block.name or "residual block")
    h = block.w1(x)
    if block.bn1 is not None:
        h = block.bn1(h)
    r = block.w2(block.act(h))
    if block.bn2 is not None:
        r = block.bn2(r)
    s = block.ws(x)
    if block.bns is not None:
        s = block.bns(s)
    return s + r


def plain_forward(x, block: PlainBlock) -> np.ndarray:
    x = as_tensor(x, "layer input")
    _check_dims(x, block.in_dims, block.name or "plain layer")
    return block.act(block.w(x))


def block_forward(x, block):
    if isinstance(block, ResBlockSpec):
        return resblock_forward(x, block)
    return plain_forward(x, block)


def stem_forward(x, stem) -> np.ndarray:
    for layer in stem:
        x = layer(x)
    return x


def network_forward(x, net: NetworkSpec) -> TapTrace:
    x = as_tensor(x, "network input")
    _check_dims(x, net.input_dims, "network")
    phi0 = stem_forward(x, net.stem)
    outs = []
    h = phi0
    for block in net.blocks:
        h = block_forward(h, block)
        outs.append(h)
    # taps are copies so later consumers can never alias each other
    return TapTrace(x.copy(), np.array(phi0, copy=True), tuple(np.array(o, copy=True) for o in outs))
