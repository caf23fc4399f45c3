import numpy as np
import pytest

from peel.errors import ShapeError
from peel.forward import network_forward, resblock_forward
from peel.modelio import InitScheme, NetworkSpec, PReLU, build_arch, identity_conv, random_init
from peel.oracle import BlockMatrices

from conftest import small_block


def test_skip_only_block_is_identity(rng):
    b = small_block((2, 3, 3))
    zero = b.__class__(b.w1.__class__(np.zeros_like(b.w1.kernel), b.w1.geom), b.w2.__class__(np.zeros_like(b.w2.kernel), b.w2.geom), identity_conv(2), b.in_dims, skip="identity")
    x = rng.standard_normal((2, 3, 3))
    assert np.array_equal(resblock_forward(x, zero), x)


def test_matches_dense_matrices(rng):
    for seed in range(5):
        b = small_block((2, 4, 4), 4, seed=seed, stride=2)
        m = BlockMatrices(b)
        x = rng.standard_normal(b.in_dims)
        h = m.W1 @ x.ravel()
        y = m.Ws @ x.ravel() + m.W2 @ np.maximum(h, 0)
        assert np.allclose(resblock_forward(x, b).ravel(), y, rtol=1e-12, atol=1e-12)


def test_unit_prelu_network_is_linear(rng):
    net = random_init(build_arch("resnet18", input_dims=(3, 16, 16), widths=(2, 2, 2, 2), activation=1.0), InitScheme("uniform", seed=4))
    assert all(isinstance(b.act, PReLU) for b in net.blocks)
    x, z = rng.standard_normal((2, 3, 16, 16))
    f = lambda v: network_forward(v, net).final
    assert np.allclose(f(2 * x - 3 * z), 2 * f(x) - 3 * f(z), rtol=1e-10, atol=1e-10)


def test_taps_chain(rng):
    net = random_init(build_arch("resnet18", input_dims=(3, 16, 16), widths=(2, 2, 2, 2)), InitScheme("uniform", seed=1))
    x = rng.uniform(0, 255, (3, 16, 16))
    tr = network_forward(x, net)
    assert len(tr) == 8
    for i, b in enumerate(net.blocks):
        assert np.array_equal(resblock_forward(tr.block_input(i), b), tr.block_outputs[i])
    assert tr.final is tr.block_outputs[-1]


def test_input_is_not_mutated(rng):
    b = small_block((2, 3, 3))
    net = NetworkSpec((2, 3, 3), (), (b,))
    x = rng.standard_normal((2, 3, 3))
    keep = x.copy()
    tr = network_forward(x, net)
    tr.input[0, 0, 0] = 99.0
    assert np.array_equal(x, keep)


def test_wrong_input_shape():
    b = small_block((2, 3, 3))
    with pytest.raises(ShapeError):
        resblock_forward(np.zeros((3, 3, 3)), b)
