from pathlib import Path

import numpy as np
import pytest

from peel.modelio import InitScheme, build_custom, random_init

DATA = Path(__file__).parent / "data"


def small_block(in_dims=(2, 4, 4), out_channels=None, seed=0, stride=1, activation=None, shortcut="conv", kind="uniform"):
    """One randomly initialized residual block, built through the public description format."""
    rec = {"out_channels": out_channels or in_dims[0], "stride": stride, "shortcut": shortcut}
    if activation is not None:
        rec["activation"] = activation
    net = build_custom({"input_dims": list(in_dims), "blocks": [rec]})
    return random_init(net, InitScheme(kind, seed=seed)).blocks[0]


def fd_gradient(f, x, h=1e-6):
    """Central finite differences of a scalar function."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def face_image():
    from peel.imageio import read_image

    return read_image(DATA / "face64.ppm")


# acceptance outcomes, filled by test_acceptance and printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail, *extra = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
        for text in extra:
            terminalreporter.write_line(text)
