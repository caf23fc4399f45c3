"""Exact inversion of tiny residual blocks by enumerating activation patterns.

For a fixed on/off pattern ``S`` of the hidden units the block is affine in
``x``, so the best input for that pattern is a linear least-squares solution.
A pattern's solution counts only if its hidden preactivations actually carry
the signs the pattern assumed. The minimum over feasible patterns is the
global optimum of the constrained inversion problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficientError, ShapeError, ValidationError
from .forward import resblock_forward
from .modelio import ResBlockSpec
from .tensor import as_tensor

RANK_RTOL = 1e-10
FEAS_EPS = 1e-9


def lstsq(A, b):
    """Least squares by SVD; returns ``(x, ||Ax - b||)``.

    Raises :class:`RankDeficientError` when a singular value falls below
    ``1e-10 * sigma_max``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
        raise ShapeError(f"lstsq needs A (m x n) and b (m,), got {A.shape} and {b.shape}")
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    if rank < A.shape[1]:
        raise RankDeficientError(rank, A.shape[1])
    x = vt.T @ ((u.T @ b) / s)
    return x, float(np.linalg.norm(A @ x - b))


def operator_matrix(fn, in_dims):
    """Columns of a linear map, found by applying ``fn`` to basis tensors."""
    n = int(np.prod(in_dims))
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(np.ravel(fn(e.reshape(in_dims))))
    return np.stack(cols, axis=1)


@dataclass
class OracleResult:
    x: np.ndarray
    objective: float
    pattern: np.ndarray  # 0/1 per hidden unit, 1 = active
    mask_index: int
    injective: bool
    feasible_patterns: int

    def to_dict(self):
        return {
            "x": self.x.ravel().tolist(),
            "x_dims": list(self.x.shape),
            "objective": self.objective,
            "pattern": self.pattern.astype(int).ravel().tolist(),
            "mask_index": self.mask_index,
            "injective": self.injective,
            "feasible_patterns": self.feasible_patterns,
        }


class BlockMatrices:
    """Dense ``W1, W2, Ws`` and their constant offsets for one block."""

    def __init__(self, block: ResBlockSpec):
        if block.has_batchnorm:
            raise ValidationError(f"{block.name}: fold batch norms before running the oracle")
        self.block = block
        hid = block.hidden_dims
        out = block.out_dims
        self.W1 = operator_matrix(block.w1.linear, block.in_dims)
        self.W2 = operator_matrix(block.w2.linear, hid)
        self.Ws = operator_matrix(block.ws.linear, block.in_dims)
        self.b1 = block.w1.offset(hid).ravel()
        self.c = block.w2.offset(out).ravel() + block.ws.offset(out).ravel()
        self.slope = float(block.act.slope)


def _batch_solve(A, B):
    """Min-norm least squares for stacked systems; also flags full column rank."""
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    keep = s > RANK_RTOL * s[:, :1]
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    ub = np.einsum("kmr,km->kr", u, B)
    x = np.einsum("krn,kr->kn", vt, ub * inv)
    return x, keep.sum(axis=1) == A.shape[2]


def oracle_invert_block(y, block: ResBlockSpec, max_hidden: int = 14, chunk: int = 512) -> OracleResult:
    """Globally optimal input for ``y`` over all activation patterns.

    Masks are enumerated as a binary counter (bit ``j`` of the mask index is
    hidden unit ``j`` in row-major order) and ties are broken by the smaller
    index, so the result is deterministic. Patterns whose restricted map is
    rank deficient contribute their minimum-norm solution.
    """
    if not isinstance(block, ResBlockSpec):
        raise ValidationError("the oracle handles residual blocks only")
    y = as_tensor(y, "block output")
    if y.shape != tuple(block.out_dims):
        raise ShapeError(f"expected block output of shape {block.out_dims}, got {y.shape}")
    m = int(np.prod(block.hidden_dims))
    if m > max_hidden:
        raise ValidationError(f"hidden dimension {m} exceeds max_hidden={max_hidden}")
    mats = BlockMatrices(block)
    a = mats.slope
    yv = y.ravel()
    bits = np.arange(m)
    best = None
    feasible = 0
    for start in range(0, 1 << m, chunk):
        idx = np.arange(start, min(start + chunk, 1 << m))
        S = ((idx[:, None] >> bits) & 1).astype(np.float64)
        d = S + a * (1.0 - S)
        # y - c - W2 D b1 = (Ws + W2 D W1) x
        A = mats.Ws[None] + np.einsum("oh,kh,hn->kon", mats.W2, d, mats.W1)
        rhs = yv - mats.c
        B = rhs[None] - (mats.W2[None] * (d * mats.b1)[:, None, :]).sum(axis=2)
        x, full = _batch_solve(A, B)
        pre = x @ mats.W1.T + mats.b1
        ok = np.all(np.where(S > 0, pre >= -FEAS_EPS, pre <= FEAS_EPS), axis=1)
        feasible += int(ok.sum())
        res = np.einsum("kon,kn->ko", A, x) - B
        r2 = np.einsum("ko,ko->k", res, res)
        for k in np.flatnonzero(ok):
            if best is None or r2[k] < best[0]:
                best = (float(r2[k]), int(idx[k]), x[k], bool(full[k]), S[k])
    if best is None:
        raise ValidationError("no sign pattern is feasible; the output is not realizable")
    _, k, x, inj, pattern = best
    x = x.reshape(block.in_dims)
    # report the true constrained objective, evaluated through the block itself
    r = yv - resblock_forward(x, block).ravel()
    obj = float(r @ r)
    return OracleResult(x, obj, pattern.reshape(block.hidden_dims), k, inj, feasible)
