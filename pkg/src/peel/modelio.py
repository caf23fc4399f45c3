"""Residual network descriptions: layers, architectures, init, and storage.

A model on disk is a directory holding ``model.json`` (ordered layer records
with geometry and byte offsets) and ``weights.bin`` (float32 little-endian
arrays, concatenated row-major).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ModelFormatError, UnsupportedStructureError, ValidationError
from .tensor import ConvGeometry, conv2d, conv2d_adjoint, conv_output_dims, maxpool, prelu, relu

FORMAT_NAME = "peel-model"
FORMAT_VERSION = 1


def _frozen(a):
    if a is None:
        return None
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Conv:
    kernel: np.ndarray
    geom: ConvGeometry = ConvGeometry()
    bias: np.ndarray | None = None

    def __post_init__(self):
        k = _frozen(self.kernel)
        if k.ndim != 4:
            raise ValidationError(f"conv kernel must be 4-d, got shape {k.shape}")
        object.__setattr__(self, "kernel", k)
        b = _frozen(self.bias)
        if b is not None and b.shape != (k.shape[0],):
            raise ValidationError(f"bias shape {b.shape} does not match {k.shape[0]} outputs")
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    def out_dims(self, in_dims):
        return conv_output_dims(in_dims, self.kernel.shape, self.geom)

    def linear(self, x):
        return conv2d(x, self.kernel, self.geom)

    def __call__(self, x):
        y = conv2d(x, self.kernel, self.geom)
        if self.bias is not None:
            y += self.bias[:, None, None]
        return y

    def adjoint(self, g, in_dims):
        return conv2d_adjoint(g, self.kernel, self.geom, in_dims)

    def offset(self, out_dims):
        """The constant term of the affine map, broadcast to ``out_dims``."""
        if self.bias is None:
            return np.zeros(out_dims)
        return np.broadcast_to(self.bias[:, None, None], out_dims).copy()


@dataclass(frozen=True)
class ReLU:
    slope = 0.0

    def __call__(self, x):
        return relu(x)

    def out_dims(self, in_dims):
        return tuple(in_dims)


@dataclass(frozen=True)
class PReLU:
    a: float

    @property
    def slope(self):
        return float(self.a)

    def __call__(self, x):
        return prelu(x, self.a)

    def out_dims(self, in_dims):
        return tuple(in_dims)


@dataclass(frozen=True)
class MaxPool:
    size: int = 3
    stride: int = 2
    padding: int = 0

    def __call__(self, x):
        return maxpool(x, self.size, self.stride, self.padding)[0]

    def out_dims(self, in_dims):
        c, h, w = in_dims
        ho = (h + 2 * self.padding - self.size) // self.stride + 1
        wo = (w + 2 * self.padding - self.size) // self.stride + 1
        if self.size > min(h, w) + 2 * self.padding:
            raise ValidationError(f"pool window {self.size} larger than input {(h, w)}")
        return (c, ho, wo)


@dataclass(frozen=True)
class BatchNorm:
    """Inference-mode batch normalization (per-channel affine)."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if np.any(self.var + self.eps <= 0):
            raise ValidationError("batch-norm variance + eps must be positive")

    @property
    def scale(self):
        return self.gamma / np.sqrt(self.var + self.eps)

    def __call__(self, x):
        return (x - self.mean[:, None, None]) * self.scale[:, None, None] + self.beta[:, None, None]

    def out_dims(self, in_dims):
        return tuple(in_dims)


Activation = Union[ReLU, PReLU]
StemLayer = Union[Conv, ReLU, PReLU, MaxPool, BatchNorm]


def identity_conv(channels):
    k = np.zeros((channels, channels, 1, 1))
    k[np.arange(channels), np.arange(channels)] = 1.0
    return Conv(k)


def space_to_depth_conv(channels, factor=2):
    """Fixed stride-``factor`` shortcut that moves each spatial block into channels.

    Output channel ``c * factor**2 + u * factor + v`` holds input channel ``c``
    at offset ``(u, v)`` of each block, so the map is a permutation.
    """
    f = factor
    k = np.zeros((channels * f * f, channels, f, f))
    for c in range(channels):
        for u in range(f):
            for v in range(f):
                k[c * f * f + u * f + v, c, u, v] = 1.0
    return Conv(k, ConvGeometry(f, 0))


SKIP_KINDS = ("identity", "conv", "space_to_depth")


@dataclass(frozen=True)
class ResBlockSpec:
    """``y = Ws x + W2 act(W1 x)`` with optional batch norms after each conv."""

    w1: Conv
    w2: Conv
    ws: Conv
    in_dims: tuple
    act: Activation = ReLU()
    name: str = ""
    # "identity" and "space_to_depth" shortcuts are fixed; "conv" is learned
    skip: str = "conv"
    bn1: BatchNorm | None = None
    bn2: BatchNorm | None = None
    bns: BatchNorm | None = None

    @property
    def hidden_dims(self):
        return self.w1.out_dims(self.in_dims)

    @property
    def out_dims(self):
        return self.ws.out_dims(self.in_dims)

    @property
    def has_batchnorm(self):
        return any(b is not None for b in (self.bn1, self.bn2, self.bns))

    @property
    def identity_skip(self):
        return self.skip == "identity"

    def check(self):
        if self.skip not in SKIP_KINDS:
            raise ValidationError(f"unknown shortcut kind {self.skip!r}")
        hid = self.w1.out_dims(self.in_dims)
        branch = self.w2.out_dims(hid)
        skip = self.ws.out_dims(self.in_dims)
        if branch != skip:
            raise ValidationError(f"skip path gives {skip} but residual path gives {branch}")
        return skip


@dataclass(frozen=True)
class PlainBlock:
    """A non-residual layer ``y = act(W x)``, used for ablations."""

    w: Conv
    in_dims: tuple
    act: Activation = ReLU()
    name: str = ""

    @property
    def hidden_dims(self):
        return self.w.out_dims(self.in_dims)

    @property
    def out_dims(self):
        return self.hidden_dims

    def check(self):
        return self.out_dims


Block = Union[ResBlockSpec, PlainBlock]


@dataclass(frozen=True)
class NetworkSpec:
    input_dims: tuple
    stem: tuple = ()
    blocks: tuple = ()
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "stem", tuple(self.stem))
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def stem_output_dims(self):
        dims = self.input_dims
        for layer in self.stem:
            dims = layer.out_dims(dims)
        return dims

    @property
    def output_dims(self):
        return self.blocks[-1].out_dims if self.blocks else self.stem_output_dims

    def validate(self):
        """Check that dimensions chain end to end; errors name the layer index."""
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ModelFormatError(f"input_dims must be three positive extents, got {self.input_dims}")
        if not self.blocks:
            raise ModelFormatError("network needs at least one block")
        dims = self.input_dims
        for i, layer in enumerate(self.stem):
            try:
                dims = layer.out_dims(dims)
            except ValidationError as exc:
                raise ModelFormatError(str(exc), layer=f"stem[{i}]") from None
        for i, block in enumerate(self.blocks):
            if tuple(block.in_dims) != tuple(dims):
                raise ModelFormatError(
                    f"declared input dims {tuple(block.in_dims)} but previous layer gives {tuple(dims)}",
                    layer=f"blocks[{i}]",
                )
            try:
                dims = block.check()
            except ValidationError as exc:
                raise ModelFormatError(str(exc), layer=f"blocks[{i}]") from None
        return self


# --------------------------------------------------------------------------
# architectures

STAGE_BLOCKS = {
    "resnet18": (2, 2, 2, 2),
    "resnet34": (3, 4, 6, 3),
    # same basic block as resnet18/34, only the counts differ
    "resnet50a": (6, 8, 12, 6),
    "resnet152a": (3, 8, 36, 3),
}
STANDARD_WIDTHS = (64, 128, 256, 512)


def _zeros_conv(cin, cout, k, stride=1, padding=0):
    return Conv(np.zeros((cout, cin, k, k)), ConvGeometry(stride, padding))


def _activation(spec):
    if spec is None or spec == "relu":
        return ReLU()
    if isinstance(spec, (int, float)):
        return PReLU(float(spec))
    if isinstance(spec, dict) and spec.get("type") == "prelu":
        return PReLU(float(spec["a"]))
    if isinstance(spec, dict) and spec.get("type") == "relu":
        return ReLU()
    raise ValidationError(f"unknown activation {spec!r}")


def _residual_block(dims, cout, stride, act, name, kernel=3, shortcut="conv"):
    cin = dims[0]
    pad = kernel // 2
    w1 = _zeros_conv(cin, cout, kernel, stride, pad)
    w2 = _zeros_conv(cout, cout, kernel, 1, pad)
    if stride == 1 and cin == cout:
        return ResBlockSpec(w1, w2, identity_conv(cin), tuple(dims), act, name, "identity")
    if shortcut == "space_to_depth":
        if cout != cin * stride * stride:
            raise ValidationError(
                f"{name}: space-to-depth shortcut needs out_channels = {cin * stride * stride}, got {cout}"
            )
        return ResBlockSpec(w1, w2, space_to_depth_conv(cin, stride), tuple(dims), act, name, "space_to_depth")
    if shortcut != "conv":
        raise ValidationError(f"unknown shortcut kind {shortcut!r}")
    ws = _zeros_conv(cin, cout, 1, stride, 0)
    return ResBlockSpec(w1, w2, ws, tuple(dims), act, name, "conv")


def build_arch(
    name,
    input_dims=(3, 64, 64),
    pooling=False,
    widths=None,
    activation=None,
    shortcut="conv",
) -> NetworkSpec:
    """Build a zero-weight network for a named architecture or a custom manifest.

    Named architectures share the ResNet stem (7x7 stride-2 conv, activation,
    optional 3x3 stride-2 max-pool) and four stages of basic residual blocks.
    ``widths`` overrides the per-stage channel counts; the stem emits
    ``widths[0]`` channels. Stage-entry blocks downsample with a stride-2
    ``W1``; their shortcut is a learned stride-2 1x1 conv (``shortcut="conv"``)
    or a fixed space-to-depth map (``shortcut="space_to_depth"``, which needs
    each stage to be four times wider than the previous one).
    """
    if name not in STAGE_BLOCKS:
        path = Path(name)
        if path.suffix == ".json" or path.is_file():
            return build_custom(json.loads(path.read_text()))
        raise ValidationError(f"unknown architecture {name!r}; known: {sorted(STAGE_BLOCKS)}")
    widths = tuple(widths or STANDARD_WIDTHS)
    if len(widths) != 4 or min(widths) < 1:
        raise ValidationError(f"need four positive stage widths, got {widths}")
    act = _activation(activation)
    input_dims = tuple(int(d) for d in input_dims)
    stem = [_zeros_conv(input_dims[0], widths[0], 7, 2, 3), act]
    if pooling:
        stem.append(MaxPool(3, 2, 1))
    dims = input_dims
    for layer in stem:
        dims = layer.out_dims(dims)
    blocks = []
    for stage, (count, width) in enumerate(zip(STAGE_BLOCKS[name], widths)):
        for j in range(count):
            stride = 2 if (stage > 0 and j == 0) else 1
            b = _residual_block(
                dims, width, stride, act, f"layer{stage + 1}.{j}", shortcut=shortcut
            )
            blocks.append(b)
            dims = b.out_dims
    return NetworkSpec(input_dims, stem, blocks, name=name).validate()


def build_custom(desc) -> NetworkSpec:
    """Build a zero-weight network from an architecture description dict."""
    try:
        dims = tuple(int(d) for d in desc["input_dims"])
        stem = []
        for i, rec in enumerate(desc.get("stem", [])):
            kind = rec["type"]
            d = dims
            for layer in stem:
                d = layer.out_dims(d)
            if kind == "conv2d":
                k = int(rec.get("kernel_size", 3))
                stem.append(
                    _zeros_conv(d[0], int(rec["out_channels"]), k, rec.get("stride", 1), rec.get("padding", k // 2))
                )
            elif kind == "maxpool":
                stem.append(MaxPool(int(rec.get("size", 2)), int(rec.get("stride", rec.get("size", 2))), int(rec.get("padding", 0))))
            elif kind in ("relu", "prelu"):
                stem.append(_activation(rec))
            else:
                raise ModelFormatError(f"unknown stem layer type {kind!r}", layer=f"stem[{i}]")
        d = dims
        for layer in stem:
            d = layer.out_dims(d)
        blocks = []
        for i, rec in enumerate(desc["blocks"]):
            kind = rec.get("type", "residual")
            cout = int(rec.get("out_channels", d[0]))
            stride = int(rec.get("stride", 1))
            k = int(rec.get("kernel_size", 3))
            act = _activation(rec.get("activation"))
            name = rec.get("name", f"block{i + 1}")
            if kind == "residual":
                b = _residual_block(d, cout, stride, act, name, k, rec.get("shortcut", "conv"))
            elif kind == "plain":
                b = PlainBlock(_zeros_conv(d[0], cout, k, stride, rec.get("padding", k // 2)), d, act, name)
            else:
                raise ModelFormatError(f"unknown block type {kind!r}", layer=f"blocks[{i}]")
            blocks.append(b)
            d = b.out_dims
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed architecture description: {exc}") from None
    except ValidationError as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(str(exc)) from None
    return NetworkSpec(dims, stem, blocks, name=desc.get("name", "custom")).validate()


# --------------------------------------------------------------------------
# initialization


@dataclass(frozen=True)
class InitScheme:
    """Random weight distribution.

    ``kind`` is ``"fan_in"`` (normal, std ``sqrt(2 / fan_in)`` per kernel),
    ``"uniform"`` (uniform on ``+-1/sqrt(fan_in)``, the usual framework
    default for untrained convolutions) or ``"gaussian"`` (fixed std ``sigma``). ``input_scale`` multiplies the first
    stem convolution, which lets a model consume 0-255 pixels while drawing
    weights as if inputs were normalized. ``branch_scale`` multiplies every
    residual-branch output kernel ``W2``.
    """

    kind: str = "fan_in"
    seed: int = 0
    sigma: float | None = None
    input_scale: float = 1.0
    branch_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fan_in", "uniform", "gaussian"):
            raise ValidationError(f"unknown init kind {self.kind!r}")
        if self.kind == "gaussian" and (self.sigma is None or not self.sigma > 0):
            raise ValidationError(f"gaussian init needs sigma > 0, got {self.sigma}")
        if self.seed < 0:
            raise ValidationError("seed must be nonnegative")

    def std(self, kernel_shape):
        if self.kind == "gaussian":
            return float(self.sigma)
        fan_in = int(np.prod(kernel_shape[1:]))
        if self.kind == "uniform":
            return float(np.sqrt(1.0 / (3.0 * fan_in)))
        return float(np.sqrt(2.0 / fan_in))

    def draw(self, rng, shape):
        if self.kind == "uniform":
            bound = 1.0 / np.sqrt(np.prod(shape[1:]))
            return rng.uniform(-bound, bound, size=shape)
        return rng.standard_normal(shape) * self.std(shape)


def random_init(spec: NetworkSpec, scheme: InitScheme) -> NetworkSpec:
    """Fill every learnable kernel; a pure function of ``(spec, scheme)``."""
    rng = np.random.default_rng(scheme.seed)

    def draw(conv, gain=1.0):
        shape = conv.kernel.shape
        k = scheme.draw(rng, shape) * gain
        # round to storage precision so a saved model reloads bit-exactly
        return replace(conv, kernel=k.astype(np.float32).astype(np.float64))

    stem = []
    first = True
    for layer in spec.stem:
        if isinstance(layer, Conv):
            layer = draw(layer, scheme.input_scale if first else 1.0)
            first = False
        stem.append(layer)
    blocks = []
    for b in spec.blocks:
        if isinstance(b, ResBlockSpec):
            w1 = draw(b.w1, scheme.input_scale if (first and not spec.stem) else 1.0)
            w2 = draw(b.w2, scheme.branch_scale)
            ws = draw(b.ws) if b.skip == "conv" else b.ws
            b = replace(b, w1=w1, w2=w2, ws=ws)
        else:
            b = replace(b, w=draw(b.w, scheme.input_scale if (first and not spec.stem) else 1.0))
        first = False
        blocks.append(b)
    return replace(spec, stem=tuple(stem), blocks=tuple(blocks))


# --------------------------------------------------------------------------
# batch-norm folding


def _fold(conv: Conv, bn: BatchNorm) -> Conv:
    s = bn.scale
    kernel = conv.kernel * s[:, None, None, None]
    bias = conv.bias if conv.bias is not None else np.zeros(conv.out_channels)
    return Conv(kernel, conv.geom, (bias - bn.mean) * s + bn.beta)


def fold_batchnorm(spec: NetworkSpec) -> NetworkSpec:
    """Absorb every batch norm into the convolution immediately before it."""
    stem = []
    for i, layer in enumerate(spec.stem):
        if isinstance(layer, BatchNorm):
            if not stem or not isinstance(stem[-1], Conv):
                raise UnsupportedStructureError(
                    f"stem[{i}]: batch norm must directly follow a convolution"
                )
            stem[-1] = _fold(stem[-1], layer)
        else:
            stem.append(layer)
    blocks = []
    for b in spec.blocks:
        if isinstance(b, ResBlockSpec) and b.has_batchnorm:
            w1 = _fold(b.w1, b.bn1) if b.bn1 is not None else b.w1
            w2 = _fold(b.w2, b.bn2) if b.bn2 is not None else b.w2
            ws = _fold(b.ws, b.bns) if b.bns is not None else b.ws
            skip = "conv" if b.bns is not None else b.skip
            b = replace(b, w1=w1, w2=w2, ws=ws, bn1=None, bn2=None, bns=None, skip=skip)
        blocks.append(b)
    return replace(spec, stem=tuple(stem), blocks=tuple(blocks))


def has_batchnorm(spec: NetworkSpec) -> bool:
    return any(isinstance(l, BatchNorm) for l in spec.stem) or any(
        isinstance(b, ResBlockSpec) and b.has_batchnorm for b in spec.blocks
    )


# --------------------------------------------------------------------------
# storage


class _Blob:
    def __init__(self):
        self.parts = []
        self.size = 0

    def add(self, arr):
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        ref = {"offset": self.size, "shape": list(arr.shape)}
        self.parts.append(data)
        self.size += len(data)
        return ref


def _act_record(act):
    if isinstance(act, PReLU):
        return {"type": "prelu", "a": act.a}
    return {"type": "relu"}


def _conv_record(conv, blob):
    return {
        "type": "conv2d",
        "in_channels": conv.in_channels,
        "out_channels": conv.out_channels,
        "kernel_size": list(conv.kernel.shape[2:]),
        "stride": list(conv.geom.stride),
        "padding": list(conv.geom.padding),
        "weight": blob.add(conv.kernel),
        "bias": None if conv.bias is None else blob.add(conv.bias),
    }


def _bn_record(bn, blob):
    if bn is None:
        return None
    return {
        "type": "batchnorm",
        "eps": bn.eps,
        **{k: blob.add(getattr(bn, k)) for k in ("gamma", "beta", "mean", "var")},
    }


def _stem_record(layer, blob):
    if isinstance(layer, Conv):
        return _conv_record(layer, blob)
    if isinstance(layer, MaxPool):
        return {"type": "maxpool", "size": layer.size, "stride": layer.stride, "padding": layer.padding}
    if isinstance(layer, BatchNorm):
        return _bn_record(layer, blob)
    return _act_record(layer)


def model_to_manifest(spec: NetworkSpec):
    blob = _Blob()
    blocks = []
    for b in spec.blocks:
        if isinstance(b, ResBlockSpec):
            rec = {
                "type": "residual",
                "name": b.name,
                "in_dims": list(b.in_dims),
                "activation": _act_record(b.act),
                "skip": b.skip,
                "w1": _conv_record(b.w1, blob),
                "w2": _conv_record(b.w2, blob),
                "ws": _conv_record(b.ws, blob),
            }
            for key in ("bn1", "bn2", "bns"):
                if getattr(b, key) is not None:
                    rec[key] = _bn_record(getattr(b, key), blob)
        else:
            rec = {
                "type": "plain",
                "name": b.name,
                "in_dims": list(b.in_dims),
                "activation": _act_record(b.act),
                "w": _conv_record(b.w, blob),
            }
        blocks.append(rec)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "name": spec.name,
        "input_dims": list(spec.input_dims),
        "stem": [_stem_record(l, blob) for l in spec.stem],
        "blocks": blocks,
        "weights_bytes": blob.size,
    }
    return manifest, b"".join(blob.parts)


def save_model(spec: NetworkSpec, directory) -> Path:
    spec.validate()
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest, blob = model_to_manifest(spec)
    (d / "model.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (d / "weights.bin").write_bytes(blob)
    return d


def _array(ref, blob, where):
    if not isinstance(ref, dict) or "offset" not in ref or "shape" not in ref:
        raise ModelFormatError(f"bad array reference {ref!r}", layer=where)
    shape = tuple(int(s) for s in ref["shape"])
    start = int(ref["offset"])
    nbytes = 4 * int(np.prod(shape))
    if start < 0 or start + nbytes > len(blob):
        raise ModelFormatError(
            f"array at offset {start} with {nbytes} bytes overruns weights.bin ({len(blob)} bytes)",
            layer=where,
        )
    return np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=start).astype(np.float64).reshape(shape)


def _parse_conv(rec, blob, where):
    if rec.get("type") != "conv2d":
        raise ModelFormatError(f"expected conv2d record, got {rec.get('type')!r}", layer=where)
    kernel = _array(rec["weight"], blob, where)
    if kernel.ndim != 4:
        raise ModelFormatError(f"kernel must be 4-d, got {kernel.shape}", layer=where)
    if list(kernel.shape[2:]) != list(rec.get("kernel_size", kernel.shape[2:])):
        raise ModelFormatError("kernel_size disagrees with weight shape", layer=where)
    bias = _array(rec["bias"], blob, where) if rec.get("bias") else None
    return Conv(kernel, ConvGeometry(tuple(rec.get("stride", (1, 1))), tuple(rec.get("padding", (0, 0)))), bias)


def _parse_bn(rec, blob, where):
    if rec is None:
        return None
    return BatchNorm(*(_array(rec[k], blob, where) for k in ("gamma", "beta", "mean", "var")), eps=float(rec.get("eps", 1e-5)))


def _parse_act(rec, where):
    try:
        return _activation(rec)
    except ValidationError as exc:
        raise ModelFormatError(str(exc), layer=where) from None


def manifest_to_model(manifest, blob) -> NetworkSpec:
    if manifest.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"not a {FORMAT_NAME} manifest")
    declared = manifest.get("weights_bytes")
    if declared is not None and int(declared) != len(blob):
        raise ModelFormatError(f"weights.bin has {len(blob)} bytes, manifest declares {declared}")
    try:
        stem = []
        for i, rec in enumerate(manifest.get("stem", [])):
            where = f"stem[{i}]"
            kind = rec.get("type")
            if kind == "conv2d":
                stem.append(_parse_conv(rec, blob, where))
            elif kind == "maxpool":
                stem.append(MaxPool(int(rec["size"]), int(rec["stride"]), int(rec.get("padding", 0))))
            elif kind == "batchnorm":
                stem.append(_parse_bn(rec, blob, where))
            elif kind in ("relu", "prelu"):
                stem.append(_parse_act(rec, where))
            else:
                raise ModelFormatError(f"unknown layer type {kind!r}", layer=where)
        blocks = []
        for i, rec in enumerate(manifest["blocks"]):
            where = f"blocks[{i}]"
            in_dims = tuple(int(d) for d in rec["in_dims"])
            act = _parse_act(rec.get("activation"), where)
            if rec.get("type") == "residual":
                blocks.append(
                    ResBlockSpec(
                        _parse_conv(rec["w1"], blob, where + ".w1"),
                        _parse_conv(rec["w2"], blob, where + ".w2"),
                        _parse_conv(rec["ws"], blob, where + ".ws"),
                        in_dims,
                        act,
                        rec.get("name", ""),
                        rec.get("skip", "conv"),
                        _parse_bn(rec.get("bn1"), blob, where),
                        _parse_bn(rec.get("bn2"), blob, where),
                        _parse_bn(rec.get("bns"), blob, where),
                    )
                )
            elif rec.get("type") == "plain":
                blocks.append(PlainBlock(_parse_conv(rec["w"], blob, where + ".w"), in_dims, act, rec.get("name", "")))
            else:
                raise ModelFormatError(f"unknown block type {rec.get('type')!r}", layer=where)
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed manifest: {exc!r}") from None
    return NetworkSpec(manifest["input_dims"], stem, blocks, name=manifest.get("name", "custom")).validate()


def load_model(directory) -> NetworkSpec:
    d = Path(directory)
    mpath, wpath = d / "model.json", d / "weights.bin"
    for p in (mpath, wpath):
        if not p.is_file():
            raise FileNotFoundError(f"missing model file {p}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model.json is not valid JSON: {exc}") from None
    return manifest_to_model(manifest, wpath.read_bytes())
