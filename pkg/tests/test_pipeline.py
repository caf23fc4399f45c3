import numpy as np
import pytest

from peel.blockinv import PenaltyConfig, solve
from peel.errors import DivergenceError, ShapeError
from peel.forward import network_forward
from peel.modelio import Conv, InitScheme, NetworkSpec, ResBlockSpec, build_custom, identity_conv, random_init
from peel.pipeline import block_seed, error_table, format_table, invert_nonresidual, peel
from peel.shallowinv import ShallowConfig
from peel.tensor import ConvGeometry

from conftest import rel


def small_net(seed=0, stem=True):
    desc = {
        "input_dims": [1, 8, 8],
        "stem": [{"type": "conv2d", "out_channels": 4, "kernel_size": 3}, {"type": "relu"}] if stem else [],
        "blocks": [{"out_channels": 4, "name": "a"}, {"out_channels": 4, "name": "b"}],
    }
    if not stem:
        desc["input_dims"] = [2, 4, 4]
        desc["blocks"] = [{"out_channels": 2, "name": "a"}, {"out_channels": 2, "name": "b"}]
    return random_init(build_custom(desc), InitScheme("uniform", seed=seed, input_scale=1 / 64 if stem else 1.0))


FAST = PenaltyConfig(epochs=300)
FAST_SHALLOW = ShallowConfig(epochs=100)


def test_identity_network(rng):
    zero = Conv(np.zeros((2, 2, 3, 3)), ConvGeometry(1, 1))
    b = ResBlockSpec(zero, zero, identity_conv(2), (2, 3, 3), skip="identity")
    net = NetworkSpec((2, 3, 3), (), (b,))
    y = rng.standard_normal((2, 3, 3))
    run = peel(y, net, PenaltyConfig(epochs=3000))
    assert run.shallow_report is None
    assert rel(run.image, y) <= 1e-8


def test_reports_run_last_to_first(rng):
    net = small_net()
    x = rng.uniform(0, 255, (1, 8, 8))
    tr = network_forward(x, net)
    run = peel(tr.final, net, FAST, FAST_SHALLOW, truth=tr)
    assert run.block_names == ["b", "a"]
    assert [e.shape for e in run.block_estimates] == [(4, 8, 8), (4, 8, 8)]
    assert run.image.shape == (1, 8, 8)
    assert {"mse", "psnr", "relative_error", "max_block_error"} <= set(run.metrics)


def test_bitwise_deterministic(rng):
    net = small_net()
    x = rng.uniform(0, 255, (1, 8, 8))
    y = network_forward(x, net).final
    a = peel(y, net, FAST, FAST_SHALLOW)
    b = peel(y, net, FAST, FAST_SHALLOW)
    assert a.image.tobytes() == b.image.tobytes()
    for u, v in zip(a.block_estimates, b.block_estimates):
        assert u.tobytes() == v.tobytes()


def test_no_recomputation_drift(rng):
    net = small_net(stem=False)
    x = rng.standard_normal((2, 4, 4))
    tr = network_forward(x, net)
    run = peel(tr.final, net, FAST, truth=tr)
    # the first block's target is the second block's estimate
    _, rep, _ = solve(run.block_estimates[0], net.blocks[0], FAST, rng=block_seed(FAST, 0))
    assert rep.data_residual == run.block_reports[1].data_residual
    assert rep.final_objective == run.block_reports[1].final_objective


def test_blocks_get_independent_seeds():
    a = block_seed(PenaltyConfig(seed=1), 0).standard_normal(3)
    b = block_seed(PenaltyConfig(seed=1), 1).standard_normal(3)
    assert not np.array_equal(a, b)


def test_shape_check(rng):
    with pytest.raises(ShapeError):
        peel(np.zeros((1, 2, 2)), small_net(), FAST)


def test_errors_name_the_block(rng):
    net = small_net(stem=False)
    with pytest.raises(DivergenceError, match=r"block 1 \(b\)"):
        peel(np.full((2, 4, 4), 1e200), net, FAST)


def test_nonresidual_identity(rng):
    w = identity_conv(3)
    y = np.abs(rng.standard_normal((3, 4, 4)))
    x, rep = invert_nonresidual(y, w, (3, 4, 4), PenaltyConfig(epochs=3000))
    # constant-step Adam settles at a floor near 1e-4 rather than converging exactly
    assert rep.data_residual <= 1e-3
    assert rel(x, y) <= 1e-3


def test_nonresidual_null_space_is_not_identified(rng):
    w = Conv(rng.standard_normal((2, 4, 1, 1)))
    x0 = rng.standard_normal((4, 3, 3))
    y = np.maximum(w(x0), 0)
    xa, ra = invert_nonresidual(y, w, x0.shape, PenaltyConfig(), rng=np.random.default_rng(1))
    xb, rb = invert_nonresidual(y, w, x0.shape, PenaltyConfig(), rng=np.random.default_rng(2))
    ysq = float(np.sum(y * y))
    assert ra.final_objective <= 1e-3 * ysq and rb.final_objective <= 1e-3 * ysq
    assert rel(xa, xb) >= 0.01


def test_error_table_layout(rng):
    net = small_net()
    x = rng.uniform(0, 255, (1, 8, 8))
    tr = network_forward(x, net)
    runs = [peel(tr.final, net, PenaltyConfig(epochs=50, seed=s), ShallowConfig(epochs=20, seed=s), truth=tr) for s in (0, 1)]
    rows = error_table(runs)
    assert [r[0] for r in rows] == ["b", "a", "Shallow Layer"]
    text = format_table(rows)
    assert "+-" in text and "Shallow Layer" in text
