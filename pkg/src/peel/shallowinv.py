"""Regularized embedding inversion of the non-residual stem.

Minimizes ``||stem(x) - target||^2 / ||target||^2 + la * R_alpha(u) + lv * R_tv(u)``
over images ``x`` inside a pixel box, where ``u`` is ``x`` mapped affinely
from the box onto ``[-1, 1]``. Evaluating the priors on ``u`` keeps their
weights independent of the pixel scale and makes the alpha-norm penalize
pixels that drift toward the edges of the box.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ShapeError, ValidationError
from .modelio import BatchNorm, Conv, MaxPool, PReLU, ReLU
from .tensor import as_tensor, maxpool, maxpool_vjp, prelu_vjp, relu_vjp, sqnorm


@dataclass(frozen=True)
class ShallowConfig:
    lambda_alpha: float = 1e-7
    lambda_tv: float = 1e-6
    alpha: float = 6.0
    beta: float = 2.0
    lr: float = 1.0
    epochs: int = 2000
    seed: int = 0
    pixel_box: tuple = (0.0, 255.0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lambda_alpha < 0 or self.lambda_tv < 0:
            raise ValidationError("regularizer weights must be nonnegative")
        if self.alpha < 1:
            raise ValidationError(f"alpha must be >= 1, got {self.alpha}")
        if not self.beta > 0:
            raise ValidationError(f"beta must be positive, got {self.beta}")
        if not self.lr > 0 or self.epochs < 1:
            raise ValidationError("need a positive learning rate and epoch count")
        lo, hi = self.pixel_box
        if not hi > lo:
            raise ValidationError(f"empty pixel box {self.pixel_box}")


def alpha_norm(x, alpha):
    """``sum |x|^alpha`` and its gradient."""
    if alpha < 1:
        raise ValidationError(f"alpha must be >= 1, got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    return float(np.sum(ax**alpha)), alpha * np.sign(x) * ax ** (alpha - 1)


def tv_norm(x, beta):
    """Total variation ``sum (dx^2 + dy^2)^(beta/2)`` over forward differences.

    Differences that would reach past the last row or column count as zero.
    Works on a single H x W image or a C x H x W stack (summed over channels).
    """
    if not beta > 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or min(x.shape[-2:]) < 2:
        raise ShapeError(f"tv_norm needs spatial extents >= 2, got {x.shape}")
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[..., :, :-1] = x[..., :, 1:] - x[..., :, :-1]
    dy[..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    s = dx * dx + dy * dy
    half = beta / 2.0
    value = float(np.sum(s**half))
    if half == 1.0:
        w = np.ones_like(s)
    else:
        # subgradient 0 where both differences vanish
        w = np.zeros_like(s)
        nz = s > 0
        w[nz] = half * s[nz] ** (half - 1.0)
    gx = 2.0 * w * dx
    gy = 2.0 * w * dy
    grad = np.zeros_like(x)
    grad[..., :, 1:] += gx[..., :, :-1]
    grad[..., :, :-1] -= gx[..., :, :-1]
    grad[..., 1:, :] += gy[..., :-1, :]
    grad[..., :-1, :] -= gy[..., :-1, :]
    return value, grad


def check_stem(stem):
    for i, layer in enumerate(stem):
        if isinstance(layer, BatchNorm):
            raise ValidationError(f"stem[{i}]: fold batch norms before shallow inversion")
        if not isinstance(layer, (Conv, ReLU, PReLU, MaxPool)):
            raise ValidationError(f"stem[{i}]: unsupported layer {type(layer).__name__}")


def stem_forward_cached(x, stem):
    cache = []
    for layer in stem:
        if isinstance(layer, MaxPool):
            y, arg = maxpool(x, layer.size, layer.stride, layer.padding)
            cache.append((layer, x.shape, arg))
        else:
            y = layer(x)
            cache.append((layer, x.shape, x))
        x = y
    return x, cache


def stem_vjp(cache, g):
    for layer, in_dims, aux in reversed(cache):
        if isinstance(layer, Conv):
            g = layer.adjoint(g, in_dims)
        elif isinstance(layer, ReLU):
            g = relu_vjp(aux, g)
        elif isinstance(layer, PReLU):
            g = prelu_vjp(aux, g, layer.a)
        else:
            g = maxpool_vjp(aux, g, in_dims)
    return g


class ShallowObjective:
    """The embedding-inversion objective for a fixed target and stem."""

    def __init__(self, target, stem, cfg: ShallowConfig):
        check_stem(stem)
        self.target = as_tensor(target, "target features")
        self.tnorm2 = sqnorm(self.target)
        if self.tnorm2 == 0:
            raise ValidationError("target features have zero norm")
        self.stem = tuple(stem)
        self.cfg = cfg
        lo, hi = cfg.pixel_box
        self.mid = 0.5 * (lo + hi)
        self.half = 0.5 * (hi - lo)

    def __call__(self, x):
        cfg = self.cfg
        phi, cache = stem_forward_cached(x, self.stem)
        if phi.shape != self.target.shape:
            raise ShapeError(f"stem gives {phi.shape}, target is {self.target.shape}")
        r = phi - self.target
        value = sqnorm(r) / self.tnorm2
        grad = stem_vjp(cache, (2.0 / self.tnorm2) * r)
        u = (x - self.mid) / self.half
        if cfg.lambda_alpha:
            ra, ga = alpha_norm(u, cfg.alpha)
            value += cfg.lambda_alpha * ra
            grad = grad + (cfg.lambda_alpha / self.half) * ga
        if cfg.lambda_tv:
            rv, gv = tv_norm(u, cfg.beta)
            value += cfg.lambda_tv * rv
            grad = grad + (cfg.lambda_tv / self.half) * gv
        return value, grad

    def fidelity(self, x):
        phi, _ = stem_forward_cached(x, self.stem)
        return sqnorm(phi - self.target) / self.tnorm2


@dataclass
class ShallowReport:
    iterations: int
    final_objective: float
    fidelity: float
    objective_trace: list = field(repr=False, default_factory=list)
    wall_time: float = 0.0
    relative_error: float | None = None

    def to_dict(self, include_trace=False):
        d = {
            "iterations": self.iterations,
            "final_objective": self.final_objective,
            "fidelity": self.fidelity,
            "relative_error": self.relative_error,
        }
        if include_trace:
            d["objective_trace"] = list(self.objective_trace)
        return d


def invert_shallow(target, stem, in_dims, cfg: ShallowConfig = ShallowConfig(), x_true=None):
    """Reconstruct the stem input whose features best match ``target``.

    Returns ``(x, report)``. Iterates are clamped into ``cfg.pixel_box``.
    """
    obj = ShallowObjective(target, stem, cfg)
    lo, hi = cfg.pixel_box
    rng = np.random.default_rng(cfg.seed)
    x = np.clip(obj.mid + rng.standard_normal(tuple(in_dims)), lo, hi)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trace = []
    start = time.perf_counter()
    for t in range(1, cfg.epochs + 1):
        value, g = obj(x)
        if not np.isfinite(value):
            raise DivergenceError(t - 1, value, "shallow stage")
        trace.append(value)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * (g * g)
        step = cfg.lr * (m / (1 - cfg.beta1**t)) / (np.sqrt(v / (1 - cfg.beta2**t)) + cfg.eps)
        x = np.clip(x - step, lo, hi)
    wall = time.perf_counter() - start
    final, _ = obj(x)
    if not np.isfinite(final):
        raise DivergenceError(cfg.epochs, final, "shallow stage")
    report = ShallowReport(cfg.epochs, float(final), obj.fidelity(x), trace, wall)
    if x_true is not None:
        x_true = np.asarray(x_true, dtype=np.float64)
        report.relative_error = float(np.linalg.norm(x - x_true) / np.linalg.norm(x_true))
    return x, report
