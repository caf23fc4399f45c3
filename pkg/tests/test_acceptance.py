"""End-to-end acceptance checks.

Each test records its outcome in ``conftest.ACCEPTANCE`` before asserting, so
the terminal summary shows one PASS/FAIL line per criterion even when a test
fails. The desk-scale reproduction is computed once per session and shared by
criteria 2 and 6.
"""

import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peel.blockinv import InversionState, PenaltyConfig, exact_objective, invert_block, penalty_objective, project_cone, solve
from peel.cli import main
from peel.forward import network_forward, resblock_forward
from peel.imageio import write_image
from peel.modelio import InitScheme, build_custom, load_model, random_init
from peel.oracle import oracle_invert_block
from peel.pipeline import error_table, format_table, peel
from peel.presets import desk_configs, desk_resnet18, single_block_instance
from peel.shallowinv import ShallowConfig, ShallowObjective, stem_forward_cached, stem_vjp
from peel.tensor import (
    ConvGeometry,
    conv2d,
    conv2d_adjoint,
    inner,
    maxpool,
    maxpool_vjp,
    prelu,
    prelu_vjp,
    relu,
    relu_pair,
    relu_vjp,
    write_tns,
)

from conftest import ACCEPTANCE, fd_gradient, rel, small_block

DESK_SEEDS = (0, 1, 2)


def record(key, ok, detail, *extra):
    ACCEPTANCE[key] = (bool(ok), detail, *extra)
    return bool(ok)


# -- criterion 1 ------------------------------------------------------------


def test_criterion_1_single_block():
    block, x, y = single_block_instance(seed=0)
    t = time.perf_counter()
    xh, rep = invert_block(y, block, PenaltyConfig(), x_true=x)
    elapsed = time.perf_counter() - t
    ok = rep.relative_error <= 0.02 and elapsed <= 60
    assert record(1, ok, f"5x8x8 block: relative error {rep.relative_error:.2e} (<= 2e-2), {elapsed:.1f} s (<= 60 s)")


# -- criterion 2 ------------------------------------------------------------


@pytest.fixture(scope="session")
def desk_runs(face_image):
    """Full PEEL on the desk ResNet-18 for three solver seeds."""
    net = desk_resnet18(0)
    trace = network_forward(face_image, net)
    runs = []
    t = time.perf_counter()
    for seed in DESK_SEEDS:
        block_cfg, shallow_cfg = desk_configs(seed)
        runs.append(peel(trace.final, net, block_cfg, shallow_cfg, truth=trace))
    return runs, time.perf_counter() - t


@pytest.mark.slow
def test_criterion_2_layerwise_peel(desk_runs):
    runs, elapsed = desk_runs
    block_errs = np.array([[r.relative_error for r in run.block_reports] for run in runs])
    shallow = np.array([run.shallow_report.relative_error for run in runs])
    table = format_table(error_table(runs))
    worst = float(block_errs.max())
    ok = worst <= 1e-3 and shallow.max() <= 0.05 and elapsed <= 1800
    detail = (
        f"worst block error {worst:.2e} (<= 1e-3), shallow {shallow.mean():.4f} +- {shallow.std():.4f} "
        f"(max {shallow.max():.4f} <= 0.05), {elapsed:.0f} s for {len(runs)} seeds (<= 1800 s)"
    )
    assert record(2, ok, detail, table)


# -- criterion 3 ------------------------------------------------------------


def oracle_instances(count=20):
    # hidden dimension 3*2*2 = 12, realizable outputs
    for seed in range(count):
        b = small_block((3, 2, 2), seed=seed)
        x = np.random.default_rng(5000 + seed).standard_normal(b.in_dims)
        yield seed, b, resblock_forward(x, b)


def test_criterion_3_oracle_certification():
    worst_gap, worst_dist, injective = 0.0, 0.0, 0
    failures = []
    cfg = PenaltyConfig(tol=1e-10)
    for seed, b, y in oracle_instances():
        ref = oracle_invert_block(y, b)
        xh, _ = invert_block(y, b, cfg)
        gap = abs(exact_objective(y, b, xh) - ref.objective)
        worst_gap = max(worst_gap, gap)
        if gap > 1e-4:
            failures.append((seed, "objective", gap))
        if ref.injective:
            injective += 1
            d = rel(xh, ref.x)
            worst_dist = max(worst_dist, d)
            if d > 1e-3:
                failures.append((seed, "distance", d))
    detail = (
        f"20 instances, hidden 12: worst objective gap {worst_gap:.1e} (<= 1e-4), "
        f"worst distance {worst_dist:.1e} on {injective} injective (<= 1e-3)"
    )
    assert record(3, not failures, detail), failures


# -- criterion 4 ------------------------------------------------------------


def random_geometry(rng):
    c, o = rng.integers(1, 5, size=2)
    kh, kw = rng.integers(1, 4, size=2)
    sh, sw = rng.integers(1, 3, size=2)
    ph, pw = rng.integers(0, 2, size=2)
    h = int(rng.integers(max(kh - 2 * ph, 1), 9))
    w = int(rng.integers(max(kw - 2 * pw, 1), 9))
    return rng.standard_normal((c, h, w)), rng.standard_normal((o, c, kh, kw)), ConvGeometry((sh, sw), (ph, pw))


def test_criterion_4_adjoints_and_gradients():
    rng = np.random.default_rng(4)
    adj = 0.0
    for _ in range(100):
        x, k, g = random_geometry(rng)
        y = conv2d(x, k, g)
        gy = rng.standard_normal(y.shape)
        lhs, rhs = inner(y, gy), inner(x, conv2d_adjoint(gy, k, g, x.shape))
        adj = max(adj, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))

    worst = {}

    def check(name, analytic, fd):
        worst[name] = max(worst.get(name, 0.0), rel(analytic, fd))

    for _ in range(50):
        x = rng.standard_normal((2, 4, 4))
        x[np.abs(x) < 1e-3] = 0.5
        g = rng.standard_normal(x.shape)
        a = float(rng.uniform(0.05, 0.9))
        check("relu", relu_vjp(x, g), fd_gradient(lambda z: inner(relu(z), g), x.copy()))
        check("prelu", prelu_vjp(x, g, a), fd_gradient(lambda z: inner(prelu(z, a), g), x.copy()))
        # distinct values so the argmax is stable under the probe
        xm = rng.permutation(16 * 2).reshape(2, 4, 4) * 0.1 + rng.uniform(0, 0.01, (2, 4, 4))
        ym, idx = maxpool(xm, 2, 2)
        gm = rng.standard_normal(ym.shape)
        check("maxpool", maxpool_vjp(idx, gm, xm.shape), fd_gradient(lambda z: inner(maxpool(z, 2, 2)[0], gm), xm.copy()))
        xc, k, geom = random_geometry(rng)
        gc = rng.standard_normal(conv2d(xc, k, geom).shape)
        check("conv", conv2d_adjoint(gc, k, geom, xc.shape), fd_gradient(lambda z: inner(conv2d(z, k, geom), gc), xc.copy()))

    cfg = PenaltyConfig(lambda1=3.0, lambda2=2.0)
    for trial in range(50):
        b = small_block((2, 3, 3), 2 + 2 * (trial % 2), seed=trial)
        s = InversionState(rng.standard_normal(b.in_dims), np.abs(rng.standard_normal(b.hidden_dims)), np.abs(rng.standard_normal(b.hidden_dims)))
        y = rng.standard_normal(b.out_dims)
        _, grads = penalty_objective(s, y, b, cfg)
        for k, name in enumerate(("x", "p", "n")):
            def f(v, name=name):
                fields = {"x": s.x, "p": s.p, "n": s.n, name: v}
                return penalty_objective(InversionState(**fields), y, b, cfg)[0]

            check("penalty objective", grads[k], fd_gradient(f, getattr(s, name).copy()))

    stem_desc = {"input_dims": [2, 8, 8], "stem": [{"type": "conv2d", "out_channels": 3, "kernel_size": 3, "stride": 2, "padding": 1},
                                                   {"type": "relu"}, {"type": "maxpool", "kernel_size": 2, "stride": 2}],
                 "blocks": [{"out_channels": 3}]}
    scfg = ShallowConfig(lambda_alpha=1e-3, lambda_tv=1e-2)
    for trial in range(50):
        stem = random_init(build_custom(stem_desc), InitScheme("gaussian", seed=trial, sigma=0.1)).stem
        x = rng.uniform(20, 235, (2, 8, 8))
        out, cache = stem_forward_cached(x, stem)
        g = rng.standard_normal(out.shape)
        check("stem", stem_vjp(cache, g), fd_gradient(lambda z: inner(stem_forward_cached(z, stem)[0], g), x.copy(), h=1e-4))
        obj = ShallowObjective(stem_forward_cached(rng.uniform(0, 255, (2, 8, 8)), stem)[0], stem, scfg)
        check("image objective", obj(x)[1], fd_gradient(lambda z: obj(z)[0], x.copy(), h=1e-4))

    ok = adj <= 1e-12 and all(v <= 1e-5 for v in worst.values())
    detail = f"adjoint {adj:.1e} over 100 geometries; finite differences, 50 points each: " + ", ".join(
        f"{k} {v:.1e}" for k, v in worst.items()
    )
    assert record(4, ok, detail)


# -- criterion 5 ------------------------------------------------------------

STRUCTURE = {}


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.integers(0, 2**31 - 1))
def test_criterion_5a_relu_pair_and_projection(values, seed):
    x = np.array(values)
    p, n = relu_pair(x)
    exact = bool(np.array_equal(p - n, x) and np.all(p * n == 0) and np.all(p >= 0) and np.all(n >= 0))
    r = np.random.default_rng(seed)
    s = InversionState(r.standard_normal(2), r.standard_normal(x.size), r.standard_normal(x.size))
    t = InversionState(r.standard_normal(2), r.standard_normal(x.size), r.standard_normal(x.size))
    before = (np.linalg.norm(s.p - t.p), np.linalg.norm(s.n - t.n))
    project_cone(s)
    project_cone(t)
    nonexp = np.linalg.norm(s.p - t.p) <= before[0] + 1e-12 and np.linalg.norm(s.n - t.n) <= before[1] + 1e-12
    p1, n1 = s.p.copy(), s.n.copy()
    project_cone(s)
    idem = np.array_equal(s.p, p1) and np.array_equal(s.n, n1)
    STRUCTURE["relu_pair"] = STRUCTURE.get("relu_pair", True) and exact
    STRUCTURE["projection"] = STRUCTURE.get("projection", True) and nonexp and idem
    assert exact and nonexp and idem


def test_criterion_5b_feasible_every_iteration():
    block, x, y = single_block_instance(seed=1)
    bad = []

    def check(state):
        if not (np.all(state.p >= 0) and np.all(state.n >= 0)):
            bad.append(state.step)

    solve(y, block, PenaltyConfig(), callback=check)
    STRUCTURE["feasibility"] = not bad
    assert not bad


def outputs(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file() and p.name != "timing.json"}


def test_criterion_5c_commands_are_deterministic(tmp_path, face_image):
    small = ["--widths", "2,8,32,128", "--input-dims", "3,16,16", "--input-scale", "0.015625"]
    img = face_image[:, ::4, ::4]
    oracle_desc = {"input_dims": [2, 2, 2], "blocks": [{"out_channels": 2}]}
    (tmp_path / "tiny.json").write_text(json.dumps(oracle_desc))
    mismatched = []
    for rep in ("a", "b"):
        d = tmp_path / rep
        d.mkdir()
        write_image(d / "in.ppm", img)
        cmds = [
            ["gen-model", "--arch", "resnet18", "--seed", 5, *small, "--out", d / "m"],
            ["gen-model", "--arch", tmp_path / "tiny.json", "--seed", 5, "--out", d / "tiny"],
            ["forward", "--model", d / "m", "--input", d / "in.ppm", "--out", d / "y.tns", "--taps", d / "taps"],
            ["invert-block", "--model", d / "m", "--block", 7, "--features", d / "taps" / "block7.tns", "--out", d / "ib" / "x.tns",
             "--report", d / "ib" / "r.json", "--epochs", 50, "--seed", 3],
            ["invert-shallow", "--model", d / "m", "--features", d / "taps" / "stem.tns", "--out", d / "is" / "x.ppm",
             "--report", d / "is" / "r.json", "--shallow-epochs", 50, "--seed", 3],
            ["peel", "--model", d / "m", "--features", d / "y.tns", "--out", d / "pl" / "x.ppm", "--report", d / "pl" / "r.json",
             "--reference-image", d / "in.ppm", "--epochs", 30, "--shallow-epochs", 30, "--runs", 2, "--quiet"],
            ["forward", "--model", d / "tiny", "--input", d / "taps" / "stem.tns", "--out", d / "dummy.tns"],
            ["metrics", "--ref", d / "in.ppm", "--test", d / "pl" / "x.ppm", "--out", d / "metrics.json"],
        ]
        for argv in cmds:
            code = main([str(a) for a in argv])
            if argv[0] == "forward" and argv[2] == d / "tiny":
                # stem features do not fit the tiny model; only the exit code matters here
                assert code == 4
                continue
            assert code == 0, argv
        x = np.random.default_rng(1).standard_normal((2, 2, 2))
        write_tns(d / "ty.tns", network_forward(x, load_model(d / "tiny")).final)
        assert main([str(a) for a in ["oracle", "--model", d / "tiny", "--block", 0, "--features", d / "ty.tns", "--out", d / "or" / "o.json"]]) == 0
    a, b = outputs(tmp_path / "a"), outputs(tmp_path / "b")
    for name in sorted(set(a) | set(b)):
        if name.endswith("run.json"):
            # manifests name their own paths; compare them with the directory swapped
            if a.get(name, b"").replace(b"/a/", b"/b/") != b.get(name):
                mismatched.append(name)
        elif a.get(name) != b.get(name):
            mismatched.append(name)
    STRUCTURE["determinism"] = not mismatched
    assert not mismatched


def test_criterion_5_summary():
    keys = ("relu_pair", "projection", "feasibility", "determinism")
    ok = all(STRUCTURE.get(k, False) for k in keys)
    detail = ", ".join(f"{k} {'ok' if STRUCTURE.get(k) else 'FAILED' if k in STRUCTURE else 'not run'}" for k in keys)
    assert record(5, ok, detail)


# -- criterion 6 ------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_residual_necessity(desk_runs):
    desc = {"input_dims": [16, 16, 16], "blocks": [{"type": "plain", "out_channels": 16, "name": f"plain{i}"} for i in range(3)]}
    errors = []
    for seed in range(3):
        net = random_init(build_custom(desc), InitScheme("uniform", seed=seed))
        x = np.random.default_rng(700 + seed).standard_normal(net.input_dims)
        tr = network_forward(x, net)
        run = peel(tr.final, net, PenaltyConfig(seed=seed), truth=tr)
        errors.append(run.metrics["relative_error"])
    runs, _ = desk_runs
    residual = max(r.relative_error for run in runs for r in run.block_reports)
    ok = min(errors) > 0.2 and residual <= 1e-3
    detail = f"plain 3-layer stack errors {', '.join(f'{e:.3f}' for e in errors)} (> 0.2); residual worst block {residual:.2e} (<= 1e-3)"
    assert record(6, ok, detail)


# -- criterion 7 ------------------------------------------------------------


def test_criterion_7_penalty_sweep():
    block, x, y = single_block_instance(seed=0)
    errs = {}
    for lam in (0.0, 10.0, 1e2, 1e3, 1e4, 1e5):
        _, rep = invert_block(y, block, PenaltyConfig(lambda1=lam, lambda2=lam), x_true=x)
        errs[lam] = rep.relative_error
    best = min(errs, key=errs.get)
    ok = best in (1e2, 1e3) and errs[0.0] > min(errs.values())
    detail = "errors " + ", ".join(f"{lam:g}: {e:.2e}" for lam, e in errs.items()) + f"; best at {best:g}"
    assert record(7, ok, detail)
