"""Reconstruction quality: MSE, PSNR, relative error, nearest-neighbour distance.

Image metrics work on the 0-255 pixel scale; feature metrics use raw values.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError, ValidationError


def _pair(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b, "mse")
    if a.size == 0:
        raise ShapeError("mse of empty tensors")
    d = a - b
    return float(np.mean(d * d))


def psnr(mse_value: float, max_val: float = 255.0) -> float:
    """``10 log10(max_val^2 / mse)``; a perfect match gives ``inf``."""
    if mse_value < 0 or math.isnan(mse_value):
        raise ValidationError(f"mse must be nonnegative, got {mse_value}")
    if not max_val > 0:
        raise ValidationError(f"max_val must be positive, got {max_val}")
    if mse_value == 0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse_value)


def relative_error(x_hat, x) -> float:
    x_hat, x = _pair(x_hat, x, "relative_error")
    ref = float(np.linalg.norm(x))
    if ref == 0:
        raise ValidationError("relative error against a zero-norm reference")
    return float(np.linalg.norm(x_hat - x)) / ref


def knn_distance(feat, refs) -> float:
    """Euclidean distance from ``feat`` to its nearest neighbour in ``refs``."""
    refs = list(refs)
    if not refs:
        raise ValidationError("knn_distance needs at least one reference")
    feat = np.asarray(feat, dtype=np.float64)
    best = math.inf
    for i, r in enumerate(refs):
        f, r = _pair(feat, r, f"knn_distance reference {i}")
        best = min(best, float(np.linalg.norm(f - r)))
    return best


def aggregate(mses, max_val: float = 255.0) -> dict:
    """Summaries over samples.

    Both conventions are reported because they differ by a Jensen gap: the
    mean of per-sample PSNRs is larger than the PSNR of the mean MSE.
    """
    mses = [float(m) for m in mses]
    if not mses:
        raise ValidationError("aggregate of an empty list")
    ps = [psnr(m, max_val) for m in mses]
    finite = [p for p in ps if math.isfinite(p)]
    return {
        "count": len(mses),
        "mse_mean": float(np.mean(mses)),
        "mse_std": float(np.std(mses)),
        "psnr_mean_per_sample": float(np.mean(finite)) if len(finite) == len(ps) else math.inf,
        "psnr_std_per_sample": float(np.std(finite)) if len(finite) == len(ps) else 0.0,
        "psnr_of_mean_mse": psnr(float(np.mean(mses)), max_val),
    }


def json_safe(obj):
    """Replace non-finite floats with the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return json_safe(obj.item())
    return obj


def image_report(x_hat, x, max_val: float = 255.0) -> dict:
    m = mse(x_hat, x)
    return {"mse": m, "psnr": psnr(m, max_val), "relative_error": relative_error(x_hat, x)}
