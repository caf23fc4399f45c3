"""Single-block inversion by a penalty method with projected Adam steps.

For a block ``y = Ws x + W2 act(W1 x)`` the hidden preactivation is split as
``W1 x = p - n`` with ``p, n >= 0`` and disjoint supports, so the block output
becomes linear in ``(x, p, n)``. The solver minimizes

    ||y - Ws x - W2 (p - a n)||^2 + lam1 * comp(p, n) + lam2 * ||W1 x - p + n||^2

over ``x`` free and ``p, n`` nonnegative, where ``a`` is the activation's
negative slope (0 for ReLU). Non-residual layers ``y = act(W x)`` use the data
term ``||y - (p - a n)||^2`` instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ShapeError, ValidationError
from .modelio import PlainBlock, ResBlockSpec
from .tensor import as_tensor, relu_pair, sqnorm


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float = 1000.0
    lambda2: float = 1000.0
    lr: float = 0.01
    epochs: int = 2000
    seed: int = 0
    init_scale: float = 0.01
    complementarity: str = "scalar"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # stop once objective < tol * ||y||^2; None runs every epoch
    tol: float | None = None

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("penalty weights must be nonnegative")
        if not self.lr > 0:
            raise ValidationError("learning rate must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or not self.eps > 0:
            raise ValidationError("invalid Adam constants")
        if self.init_scale < 0:
            raise ValidationError("init_scale must be nonnegative")
        if self.complementarity not in ("scalar", "elementwise"):
            raise ValidationError(f"unknown complementarity mode {self.complementarity!r}")


@dataclass
class InversionState:
    x: np.ndarray
    p: np.ndarray
    n: np.ndarray
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.p.shape != self.n.shape:
            raise ShapeError(f"p and n differ in shape: {self.p.shape} vs {self.n.shape}")
        if not self.m:
            self.m = [np.zeros_like(a) for a in (self.x, self.p, self.n)]
            self.v = [np.zeros_like(a) for a in (self.x, self.p, self.n)]


@dataclass
class InversionReport:
    block: str
    iterations: int
    final_objective: float
    data_residual: float
    splitting_violation: float
    complementarity: float
    exact_objective: float
    objective_trace: list
    wall_time: float = 0.0
    # filled only when the true block input is known (test mode)
    relative_error: float | None = None

    def to_dict(self, include_trace=False):
        d = {
            "block": self.block,
            "iterations": self.iterations,
            "final_objective": self.final_objective,
            "data_residual": self.data_residual,
            "splitting_violation": self.splitting_violation,
            "complementarity": self.complementarity,
            "exact_objective": self.exact_objective,
            "relative_error": self.relative_error,
        }
        if include_trace:
            d["objective_trace"] = list(self.objective_trace)
        return d


class _Linearized:
    """The affine pieces of a block, in the form the penalty needs."""

    def __init__(self, block):
        self.block = block
        self.in_dims = tuple(block.in_dims)
        self.hid_dims = tuple(block.hidden_dims)
        self.out_dims = tuple(block.out_dims)
        self.slope = float(block.act.slope)
        if isinstance(block, ResBlockSpec):
            if block.has_batchnorm:
                raise ValidationError(f"{block.name}: fold batch norms before inversion")
            self.split = block.w1
            self.skip = None if (block.identity_skip and block.ws.bias is None) else block.ws
            self.branch = block.w2
            self.residual = True
        elif isinstance(block, PlainBlock):
            self.split = block.w
            self.skip = self.branch = None
            self.residual = False
        else:
            raise ValidationError(f"cannot invert {type(block).__name__}")

    def preact(self, x):
        return self.split(x)

    def predict(self, x, p, n):
        h = p - self.slope * n if self.slope else p
        if not self.residual:
            return h
        s = x if self.skip is None else self.skip(x)
        return s + self.branch(h)

    def data_grads(self, r):
        """Gradients of ||r||^2 w.r.t. (x, h) where r = y - predict."""
        if not self.residual:
            return None, -2.0 * r
        gx = -2.0 * (r if self.skip is None else self.skip.adjoint(r, self.in_dims))
        gh = -2.0 * self.branch.adjoint(r, self.hid_dims)
        return gx, gh


def _complementarity(p, n, mode):
    if mode == "scalar":
        s = float(np.vdot(p.ravel(), n.ravel()))
        return s * s, 2.0 * s * n, 2.0 * s * p
    pn = p * n
    return sqnorm(pn), 2.0 * pn * n, 2.0 * pn * p


def _objective(lin, state, y, cfg):
    x, p, n = state.x, state.p, state.n
    r = y - lin.predict(x, p, n)
    z = lin.preact(x) - p + n
    comp, cgp, cgn = _complementarity(p, n, cfg.complementarity)
    value = sqnorm(r) + cfg.lambda1 * comp + cfg.lambda2 * sqnorm(z)
    gx, gh = lin.data_grads(r)
    split_x = 2.0 * cfg.lambda2 * lin.split.adjoint(z, lin.in_dims)
    gx = split_x if gx is None else gx + split_x
    gp = gh + cfg.lambda1 * cgp - 2.0 * cfg.lambda2 * z
    gn = -lin.slope * gh + cfg.lambda1 * cgn + 2.0 * cfg.lambda2 * z
    return value, (gx, gp, gn)


def _check_y(y, lin):
    y = as_tensor(y, "block output")
    if y.shape != lin.out_dims:
        raise ShapeError(f"expected block output of shape {lin.out_dims}, got {y.shape}")
    return y


def penalty_objective(state: InversionState, y, block, cfg: PenaltyConfig):
    """Penalty value and its exact gradients ``(dx, dp, dn)``."""
    lin = _Linearized(block)
    y = _check_y(y, lin)
    if state.x.shape != lin.in_dims or state.p.shape != lin.hid_dims:
        raise ShapeError(
            f"state shapes x{state.x.shape}, p{state.p.shape} do not match block "
            f"x{lin.in_dims}, p{lin.hid_dims}"
        )
    return _objective(lin, state, y, cfg)


def project_cone(state: InversionState) -> InversionState:
    """Clamp ``p`` and ``n`` to the nonnegative orthant; ``x`` is left alone."""
    state.p = np.maximum(state.p, 0.0)
    state.n = np.maximum(state.n, 0.0)
    return state


def exact_objective(y, block, x) -> float:
    """The constrained objective at ``x`` with ``(p, n)`` snapped to ``relu_pair(W1 x)``."""
    lin = _Linearized(block)
    p, n = relu_pair(lin.preact(x))
    return sqnorm(y - lin.predict(x, p, n))


def init_state(block, cfg: PenaltyConfig, rng=None) -> InversionState:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    in_dims, hid = tuple(block.in_dims), tuple(block.hidden_dims)
    x = cfg.init_scale * rng.standard_normal(in_dims)
    p = cfg.init_scale * rng.standard_normal(hid)
    n = cfg.init_scale * rng.standard_normal(hid)
    return project_cone(InversionState(x, p, n))


def adam_step(state: InversionState, grads, cfg: PenaltyConfig):
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    new = []
    for i, (val, g) in enumerate(zip((state.x, state.p, state.n), grads)):
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * (g * g)
        new.append(val - cfg.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + cfg.eps))
    state.x, state.p, state.n = new
    return state


def solve(y, block, cfg: PenaltyConfig, rng=None, x_true=None, callback=None):
    """Run projected Adam on the penalty objective; returns ``(x_hat, report, state)``."""
    lin = _Linearized(block)
    y = _check_y(y, lin)
    state = init_state(block, cfg, rng)
    stop_at = None if cfg.tol is None else cfg.tol * sqnorm(y)
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        value, grads = _objective(lin, state, y, cfg)
        if not np.isfinite(value):
            raise DivergenceError(epoch, value, block.name)
        state.trace.append(value)
        if stop_at is not None and value < stop_at:
            break
        adam_step(state, grads, cfg)
        project_cone(state)
        if callback is not None:
            callback(state)
    wall = time.perf_counter() - start
    final, _ = _objective(lin, state, y, cfg)
    if not np.isfinite(final):
        raise DivergenceError(state.step, final, block.name)
    r = y - lin.predict(state.x, state.p, state.n)
    z = lin.preact(state.x) - state.p + state.n
    comp = _complementarity(state.p, state.n, cfg.complementarity)[0]
    report = InversionReport(
        block=block.name,
        iterations=state.step,
        final_objective=float(final),
        data_residual=float(np.sqrt(sqnorm(r))),
        splitting_violation=float(np.sqrt(sqnorm(z))),
        complementarity=float(comp),
        exact_objective=exact_objective(y, block, state.x),
        objective_trace=state.trace,
        wall_time=wall,
    )
    if x_true is not None:
        x_true = np.asarray(x_true, dtype=np.float64)
        report.relative_error = float(np.linalg.norm(state.x - x_true) / np.linalg.norm(x_true))
    return state.x.copy(), report, state


def invert_block(y, block: ResBlockSpec, cfg: PenaltyConfig = PenaltyConfig(), x_true=None, rng=None):
    """Recover the input of one residual block from its output ``y``."""
    if not isinstance(block, ResBlockSpec):
        raise ValidationError("invert_block needs a residual block; use invert_nonresidual")
    x, report, _ = solve(y, block, cfg, rng=rng, x_true=x_true)
    return x, report
