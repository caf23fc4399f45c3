"""Dense tensor helpers and the differentiable layer primitives.

Tensors are plain ``numpy.ndarray`` objects in float64, laid out C x H x W
for feature maps and O x I x kH x kW for kernels. There is no batch axis.
Every primitive here is a pure function; nothing mutates its arguments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, ValidationError

TNS_MAGIC = b"PEELTNS1"


def as_tensor(x, name="tensor") -> np.ndarray:
    """Return ``x`` as a float64 array after checking extents and finiteness."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        raise ShapeError(f"{name}: scalar is not a tensor")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"{name}: all extents must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains NaN or Inf")
    return arr


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _pair(v, name):
    if isinstance(v, (int, np.integer)):
        return (int(v), int(v))
    v = tuple(int(i) for i in v)
    if len(v) != 2:
        raise ValidationError(f"{name} must be an int or a pair, got {v}")
    return v


@dataclass(frozen=True)
class ConvGeometry:
    """Stride and zero-padding per spatial axis."""

    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        s = _pair(self.stride, "stride")
        p = _pair(self.padding, "padding")
        if min(s) < 1:
            raise ValidationError(f"stride must be positive, got {s}")
        if min(p) < 0:
            raise ValidationError(f"padding must be nonnegative, got {p}")
        object.__setattr__(self, "stride", s)
        object.__setattr__(self, "padding", p)

    def output_hw(self, hw, khw):
        out = []
        for n, k, s, p in zip(hw, khw, self.stride, self.padding):
            o = (n + 2 * p - k) // s + 1
            if n + 2 * p - k < 0 or o < 1:
                raise ShapeError(
                    f"kernel {tuple(khw)} with {self} does not fit input {tuple(hw)}"
                )
            out.append(o)
        return tuple(out)


def conv_output_dims(in_dims, kernel_shape, geom: ConvGeometry):
    c, h, w = in_dims
    o, ci, kh, kw = kernel_shape
    if ci != c:
        raise ShapeError(f"kernel expects {ci} input channels, input has {c}")
    return (o,) + geom.output_hw((h, w), (kh, kw))


def _pad(x, padding):
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))


def conv2d(x, kernel, geom: ConvGeometry = ConvGeometry()) -> np.ndarray:
    """Cross-correlate ``x`` (C x H x W) with ``kernel`` (O x C x kH x kW)."""
    x = as_tensor(x, "conv2d input")
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 3-d input and 4-d kernel, got {x.shape}, {kernel.shape}")
    o, ho, wo = conv_output_dims(x.shape, kernel.shape, geom)
    kh, kw = kernel.shape[2:]
    sh, sw = geom.stride
    win = sliding_window_view(_pad(x, geom.padding), (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
    # (C, Ho, Wo, kh, kw) -> (C*kh*kw, Ho*Wo) columns; the kernel reshape is a view
    cols = win.transpose(0, 3, 4, 1, 2).reshape(-1, ho * wo)
    return (kernel.reshape(o, -1) @ cols).reshape(o, ho, wo)


def conv2d_adjoint(g, kernel, geom: ConvGeometry, in_dims) -> np.ndarray:
    """Exact transpose of :func:`conv2d` for inputs of shape ``in_dims``."""
    g = as_tensor(g, "conv2d_adjoint input")
    kernel = np.asarray(kernel, dtype=np.float64)
    in_dims = tuple(int(d) for d in in_dims)
    expected = conv_output_dims(in_dims, kernel.shape, geom)
    if g.shape != expected:
        raise ShapeError(f"adjoint expects gradient of shape {expected}, got {g.shape}")
    c, h, w = in_dims
    _, ho, wo = expected
    kh, kw = kernel.shape[2:]
    sh, sw = geom.stride
    ph, pw = geom.padding
    o = kernel.shape[0]
    # transposed view of the kernel matrix; no copy of the weights
    cols = (kernel.reshape(o, -1).T @ g.reshape(o, -1)).reshape(c, kh, kw, ho, wo)
    out = np.zeros((c, h + 2 * ph, w + 2 * pw))
    for u in range(kh):
        for v in range(kw):
            out[:, u : u + (ho - 1) * sh + 1 : sh, v : v + (wo - 1) * sw + 1 : sw] += cols[:, u, v]
    return out[:, ph : ph + h, pw : pw + w].copy()


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_pair(x):
    """Split ``x`` into disjoint nonnegative parts with ``p - n == x``."""
    x = as_tensor(x)
    p = np.where(x > 0, x, 0.0)
    n = np.where(x < 0, -x, 0.0)
    return p, n


def relu_vjp(x, g) -> np.ndarray:
    x, g = np.asarray(x, dtype=np.float64), np.asarray(g, dtype=np.float64)
    _same_shape(x, g, "relu_vjp")
    return np.where(x > 0, g, 0.0)


def prelu(x, a: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, a * x)


def prelu_vjp(x, g, a: float) -> np.ndarray:
    x, g = np.asarray(x, dtype=np.float64), np.asarray(g, dtype=np.float64)
    _same_shape(x, g, "prelu_vjp")
    return np.where(x >= 0, g, a * g)


def maxpool(x, k, s=None, padding=0):
    """Max-pool each channel; returns ``(y, argmax)``.

    ``argmax`` holds, for every output element, the flat row-major index into
    ``x`` of the winning input. Ties go to the first index in the window.
    """
    x = as_tensor(x, "maxpool input")
    if x.ndim != 3:
        raise ShapeError(f"maxpool expects C x H x W, got {x.shape}")
    kh, kw = _pair(k, "window")
    sh, sw = _pair(s if s is not None else k, "stride")
    ph, pw = _pair(padding, "padding")
    c, h, w = x.shape
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(f"pool window {(kh, kw)} larger than input {(h, w)}")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf)
    idx = np.arange(h * w).reshape(h, w)
    idxp = np.pad(idx, ((ph, ph), (pw, pw)), constant_values=-1)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :ho, :wo]
    iwin = sliding_window_view(idxp, (kh, kw))[::sh, ::sw][:ho, :wo]
    flat = win.reshape(c, ho, wo, kh * kw)
    j = np.argmax(flat, axis=-1)
    y = np.take_along_axis(flat, j[..., None], axis=-1)[..., 0]
    spatial = np.take_along_axis(
        np.broadcast_to(iwin.reshape(1, ho, wo, kh * kw), flat.shape), j[..., None], axis=-1
    )[..., 0]
    argmax = spatial + (np.arange(c) * h * w)[:, None, None]
    return y.copy(), argmax


def maxpool_vjp(argmax, g, in_dims) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if argmax.shape != g.shape:
        raise ShapeError(f"maxpool_vjp: argmax {argmax.shape} vs gradient {g.shape}")
    out = np.zeros(int(np.prod(in_dims)))
    np.add.at(out, argmax.ravel(), g.ravel())
    return out.reshape(in_dims)


# Reductions sum left to right so they agree bit-for-bit with a plain loop.


def inner(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_shape(a, b, "inner")
    return float(np.add.accumulate((a * b).ravel())[-1])


def sqnorm(a) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    # overflow to inf is how callers detect divergence
    with np.errstate(over="ignore"):
        return float(np.add.accumulate(a * a)[-1])


def axpy(alpha: float, a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_shape(a, b, "axpy")
    return alpha * a + b


def write_tns(path, x) -> None:
    x = as_tensor(x)
    with open(path, "wb") as fh:
        fh.write(TNS_MAGIC)
        fh.write(struct.pack(f"<I{x.ndim}I", x.ndim, *x.shape))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_tns(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != TNS_MAGIC:
        raise ValidationError(f"{path}: bad magic, not a .tns file")
    if len(raw) < 12:
        raise ValidationError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", raw, 8)
    head = 12 + 4 * rank
    if rank < 1 or len(raw) < head:
        raise ValidationError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    count = int(np.prod(dims))
    if len(raw) != head + 4 * count:
        raise ValidationError(
            f"{path}: payload has {len(raw) - head} bytes, expected {4 * count} for dims {dims}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=head).astype(np.float64)
    return as_tensor(data.reshape(dims), str(path))
