"""Binary PPM (P6) and PGM (P5) images with maxval 255.

Images map to C x H x W float64 tensors on the 0-255 scale: three channels
for PPM, one for PGM. Writing rounds to the nearest integer and clamps to
``[0, 255]``; the number of clamped values is returned so callers can
record it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError


def _tokens(raw: bytes, count: int):
    """Read ``count`` whitespace-separated header fields, skipping comments."""
    fields, i = [], 0
    while len(fields) < count:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i >= len(raw):
            raise ValidationError("truncated image header")
        if raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace() and raw[j : j + 1] != b"#":
            j += 1
        fields.append(raw[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    if i >= len(raw) or not raw[i : i + 1].isspace():
        raise ValidationError("image header is not terminated by whitespace")
    return fields, i + 1


def read_image(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), start = _tokens(raw, 4)
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise ValidationError(f"{path}: unsupported magic {magic!r}; expected P6 or P5")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ValidationError(f"{path}: non-integer header field") from None
    if w < 1 or h < 1:
        raise ValidationError(f"{path}: bad image size {w}x{h}")
    if maxval != 255:
        raise ValidationError(f"{path}: maxval must be 255, got {maxval}")
    need = w * h * channels
    body = raw[start:]
    if len(body) < need:
        raise ValidationError(f"{path}: truncated payload, {len(body)} of {need} bytes")
    pix = np.frombuffer(body[:need], dtype=np.uint8).reshape(h, w, channels)
    return pix.transpose(2, 0, 1).astype(np.float64)


def quantize(x):
    """Round to integers in ``[0, 255]``; returns ``(uint8 array, clamp count)``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("image contains NaN or Inf")
    r = np.rint(x)
    clamped = int(np.count_nonzero((r < 0) | (r > 255)))
    return np.clip(r, 0, 255).astype(np.uint8), clamped


def write_image(path, x) -> int:
    """Write a 1- or 3-channel tensor; returns the number of clamped values."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise ShapeError(f"image must be 1 x H x W or 3 x H x W, got {x.shape}")
    q, clamped = quantize(x)
    c, h, w = q.shape
    magic = b"P6" if c == 3 else b"P5"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(q.transpose(1, 2, 0).tobytes())
    return clamped
