"""Residual-dense-attention network for RGB -> 31-band reconstruction.

The net has a coordinate-augmented stem shared by two branches: a densely
connected feature branch at full resolution, and a U-shaped multiscale
branch of residual dense attention blocks (RDABs) with maxpool encoding,
transposed-convolution decoding and skip concatenation. Both branches are
fused by 1x1 + 3x3 convolutions into a linear output head.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .data import FormatError
from .tensor import (
    DimensionError,
    Tensor,
    add_broadcast,
    concat_channels,
    conv2d,
    conv_transpose2d,
    default_dtype,
    maxpool2d,
    mul_broadcast,
    pointwise,
    reduce,
    relu,
    sigmoid,
)

__all__ = [
    "ConfigError",
    "ConvParams",
    "Model",
    "ModelConfig",
    "RdabParams",
    "build_network",
    "channel_attention",
    "coordconv_forward",
    "count_params",
    "dense_branch_forward",
    "load_model",
    "model_forward",
    "param_breakdown",
    "rdab_forward",
    "save_model",
    "spatial_attention",
]

SRNM_MAGIC = b"SRNM"
REFERENCE_PARAM_COUNT = 233_059  # published size of the original network

SPATIAL_ATTENTION_KERNEL = 7


class ConfigError(ValueError):
    """The architecture configuration violates an invariant."""


@dataclass
class ModelConfig:
    """Architecture hyperparameters; the defaults define the stock network."""

    stem_width: int = 32
    rdab_convs: int = 4
    rdab_growth: int = 16
    scales: int = 3
    dense_layers: int = 4
    dense_growth: int = 16
    reduction: int = 8
    out_bands: int = 31
    use_coordconv: bool = True
    use_cbam: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.stem_width < 1 or self.rdab_convs < 1 or self.rdab_growth < 1:
            raise ConfigError("widths and depths must be positive")
        if self.dense_layers < 1 or self.dense_growth < 1:
            raise ConfigError("dense branch layers/growth must be positive")
        if self.scales < 1:
            raise ConfigError(f"scales must be >= 1, got {self.scales}")
        if self.out_bands < 1:
            raise ConfigError(f"out_bands must be >= 1, got {self.out_bands}")
        if self.reduction < 1:
            raise ConfigError(f"reduction must be >= 1, got {self.reduction}")
        if self.use_cbam and self.stem_width < self.reduction:
            raise ConfigError(
                f"stem_width ({self.stem_width}) must be >= attention reduction "
                f"({self.reduction}) so the channel MLP keeps at least one unit"
            )

    @property
    def size_multiple(self) -> int:
        """Spatial dims of inputs must divide this (one halving per pool)."""
        return 2 ** (self.scales - 1)


@dataclass
class ConvParams:
    """Weight/bias pair for one convolution (or 1x1 MLP stage)."""

    weight: Tensor
    bias: Tensor


@dataclass
class RdabParams:
    """Parameters of one residual dense attention block."""

    width: int
    convs: list[ConvParams]
    lff: ConvParams
    ca_fc1: ConvParams | None = None
    ca_fc2: ConvParams | None = None
    sa: ConvParams | None = None


class _ParamFactory:
    """Seeded fan-in-scaled uniform initializer; biases start at zero."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def conv(self, c_in: int, c_out: int, k: int, relu_after: bool) -> ConvParams:
        fan_in = c_in * k * k
        gain = np.sqrt(2.0) if relu_after else 1.0
        bound = gain * np.sqrt(3.0 / fan_in)
        dtype = default_dtype()
        w = self.rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype)
        b = np.zeros((1, c_out, 1, 1), dtype=dtype)
        return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))

    def conv_transpose(self, c_in: int, c_out: int, k: int) -> ConvParams:
        fan_in = c_in * k * k
        bound = np.sqrt(3.0 / fan_in)
        dtype = default_dtype()
        w = self.rng.uniform(-bound, bound, size=(c_in, c_out, k, k)).astype(dtype)
        b = np.zeros((1, c_out, 1, 1), dtype=dtype)
        return ConvParams(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))

    def rdab(self, width: int, n_convs: int, growth: int, reduction: int,
             use_cbam: bool) -> RdabParams:
        convs = [self.conv(width + q * growth, growth, 3, relu_after=True)
                 for q in range(n_convs)]
        lff = self.conv(width + n_convs * growth, width, 1, relu_after=False)
        if not use_cbam:
            return RdabParams(width, convs, lff)
        hidden = max(1, width // reduction)
        return RdabParams(
            width, convs, lff,
            ca_fc1=self.conv(width, hidden, 1, relu_after=True),
            ca_fc2=self.conv(hidden, width, 1, relu_after=False),
            sa=self.conv(2, 1, SPATIAL_ATTENTION_KERNEL, relu_after=False),
        )


# ---------------------------------------------------------------------------
# block forward functions


def _coord_channels(n: int, h: int, w: int, dtype) -> tuple[Tensor, Tensor]:
    # Linear ramp -1..+1 across each axis; a single row/column degenerates to 0.
    xs = np.linspace(-1.0, 1.0, w, dtype=dtype) if w > 1 else np.zeros(1, dtype=dtype)
    ys = np.linspace(-1.0, 1.0, h, dtype=dtype) if h > 1 else np.zeros(1, dtype=dtype)
    cx = np.broadcast_to(xs.reshape(1, 1, 1, w), (n, 1, h, w))
    cy = np.broadcast_to(ys.reshape(1, 1, h, 1), (n, 1, h, w))
    return Tensor(np.ascontiguousarray(cx)), Tensor(np.ascontiguousarray(cy))


def coordconv_forward(x: Tensor, p: ConvParams, use_coords: bool = True) -> Tensor:
    """Stem: append x/y coordinate channels, then 3x3 same conv + relu."""
    if use_coords:
        n, _, h, w = x.shape
        cx, cy = _coord_channels(n, h, w, x.dtype)
        x = concat_channels([x, cx, cy])
    return relu(conv2d(x, p.weight, p.bias, pad=1))


def channel_attention(f: Tensor, fc1: ConvParams, fc2: ConvParams) -> Tensor:
    """Per-channel gate in (0,1) from spatially pooled mean and max statistics.

    Both pooled vectors pass through the same two-layer bottleneck MLP
    (realized as 1x1 convolutions) before the sigmoid.
    """
    def mlp(v: Tensor) -> Tensor:
        return conv2d(relu(conv2d(v, fc1.weight, fc1.bias)), fc2.weight, fc2.bias)

    avg = mlp(reduce(f, "spatial", "mean"))
    mx = mlp(reduce(f, "spatial", "max"))
    return sigmoid(add_broadcast(avg, mx))


def spatial_attention(f: Tensor, p: ConvParams) -> Tensor:
    """Per-pixel gate in (0,1) from channel-pooled mean and max maps."""
    stats = concat_channels([reduce(f, "channel", "mean"),
                             reduce(f, "channel", "max")])
    k = p.weight.shape[2]
    return sigmoid(conv2d(stats, p.weight, p.bias, pad=(k - 1) // 2))


def rdab_forward(f: Tensor, p: RdabParams) -> Tensor:
    """Residual dense attention block, width-preserving.

    Densely connected 3x3 conv+relu layers feed a 1x1 local-feature-fusion
    conv back to the block width. With attention enabled the fused features
    are refined by channel and spatial gates and all stages are summed
    residually; with all parameters zero the block is the identity.
    """
    if f.shape[1] != p.width:
        raise DimensionError(
            f"block expects {p.width} input channels, got {f.shape[1]}"
        )
    feats = [f]
    for cp in p.convs:
        x = feats[0] if len(feats) == 1 else concat_channels(feats)
        feats.append(relu(conv2d(x, cp.weight, cp.bias, pad=1)))
    f_int = conv2d(concat_channels(feats), p.lff.weight, p.lff.bias)
    if p.ca_fc1 is None:
        return add_broadcast(f, f_int)
    f_ca = mul_broadcast(f_int, channel_attention(f_int, p.ca_fc1, p.ca_fc2))
    f_sa = mul_broadcast(f_ca, spatial_attention(f_ca, p.sa))
    return add_broadcast(add_broadcast(f, f_int), add_broadcast(f_ca, f_sa))


def dense_branch_forward(stem_out: Tensor, layers: Sequence[ConvParams]) -> Tensor:
    """Densely connected conv stack; returns the concat of stem and all layers."""
    feats = [stem_out]
    for cp in layers:
        x = feats[0] if len(feats) == 1 else concat_channels(feats)
        feats.append(relu(conv2d(x, cp.weight, cp.bias, pad=1)))
    return concat_channels(feats)


# ---------------------------------------------------------------------------
# the assembled network


class Model:
    """Parameter set plus topology for one configuration.

    Parameters are exposed as an ordered name -> tensor mapping whose order
    is stable for a given config; the serialized form relies on it.
    """

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        make = _ParamFactory(config.seed)
        cw = config.stem_width
        stem_in = 5 if config.use_coordconv else 3
        self.stem = make.conv(stem_in, cw, 3, relu_after=True)

        self.dense = [
            make.conv(cw + i * config.dense_growth, config.dense_growth, 3,
                      relu_after=True)
            for i in range(config.dense_layers)
        ]

        rdab = lambda: make.rdab(cw, config.rdab_convs, config.rdab_growth,
                                 config.reduction, config.use_cbam)
        self.encoders = [rdab() for _ in range(config.scales - 1)]
        self.bottleneck = rdab()
        self.ups: list[ConvParams] = []
        self.skips: list[ConvParams] = []
        self.decoders: list[RdabParams] = []
        for _ in range(config.scales - 1):
            self.ups.append(make.conv_transpose(cw, cw, 2))
            self.skips.append(make.conv(2 * cw, cw, 1, relu_after=False))
            self.decoders.append(rdab())

        dense_out = cw + config.dense_layers * config.dense_growth
        self.fuse = make.conv(dense_out + cw, cw, 1, relu_after=False)
        self.head = make.conv(cw, config.out_bands, 3, relu_after=False)

        self._params = self._register()

    def _register(self) -> "OrderedDict[str, Tensor]":
        params: "OrderedDict[str, Tensor]" = OrderedDict()

        def add(prefix: str, cp: ConvParams) -> None:
            params[f"{prefix}.weight"] = cp.weight
            params[f"{prefix}.bias"] = cp.bias

        def add_rdab(prefix: str, rp: RdabParams) -> None:
            for q, cp in enumerate(rp.convs, start=1):
                add(f"{prefix}.c{q}", cp)
            add(f"{prefix}.lff", rp.lff)
            if rp.ca_fc1 is not None:
                add(f"{prefix}.ca_fc1", rp.ca_fc1)
                add(f"{prefix}.ca_fc2", rp.ca_fc2)
                add(f"{prefix}.sa", rp.sa)

        add("stem", self.stem)
        for i, cp in enumerate(self.dense, start=1):
            add(f"dense{i}", cp)
        for i, rp in enumerate(self.encoders, start=1):
            add_rdab(f"enc{i}", rp)
        add_rdab("bott", self.bottleneck)
        for i in range(len(self.decoders)):
            add(f"up{i + 1}", self.ups[i])
            add(f"skip{i + 1}", self.skips[i])
            add_rdab(f"dec{i + 1}", self.decoders[i])
        add("fuse", self.fuse)
        add("head", self.head)
        return params

    def params(self) -> "OrderedDict[str, Tensor]":
        return self._params

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def forward(self, rgb: Tensor) -> Tensor:
        """Map (n,3,h,w) RGB in [0,1] to an unbounded (n,out_bands,h,w) cube."""
        n, c, h, w = rgb.shape
        if c != 3:
            raise DimensionError(f"expected 3 input channels, got {c}")
        mult = self.config.size_multiple
        if h % mult or w % mult:
            raise DimensionError(
                f"spatial dims ({h}, {w}) must be divisible by {mult} "
                f"for {self.config.scales} scales"
            )
        stem_out = coordconv_forward(rgb, self.stem, self.config.use_coordconv)

        branch_a = dense_branch_forward(stem_out, self.dense)

        x = stem_out
        enc_feats = []
        for rp in self.encoders:
            x = rdab_forward(x, rp)
            enc_feats.append(x)
            x = maxpool2d(x, 2)
        x = rdab_forward(x, self.bottleneck)
        for up, skip, dec, feat in zip(self.ups, self.skips, self.decoders,
                                       reversed(enc_feats)):
            x = conv_transpose2d(x, up.weight, up.bias, stride=2)
            x = conv2d(concat_channels([x, feat]), skip.weight, skip.bias)
            x = rdab_forward(x, dec)
        branch_b = x

        fused = conv2d(concat_channels([branch_a, branch_b]),
                       self.fuse.weight, self.fuse.bias)
        return conv2d(fused, self.head.weight, self.head.bias, pad=1)


def build_network(config: ModelConfig) -> Model:
    """Instantiate the network; identical configs give identical parameters."""
    return Model(config)


def model_forward(model: Model, rgb: Tensor) -> Tensor:
    return model.forward(rgb)


def count_params(model_or_params) -> int:
    """Total scalar parameter count."""
    params = model_or_params.params() if hasattr(model_or_params, "params") \
        else model_or_params
    return sum(t.size for t in params.values())


def param_breakdown(model: Model) -> list[tuple[str, int]]:
    """Per-layer (weight + bias) parameter counts, in registration order."""
    rows: list[tuple[str, int]] = []
    for name, t in model.params().items():
        layer = name.rsplit(".", 1)[0]
        if rows and rows[-1][0] == layer:
            rows[-1] = (layer, rows[-1][1] + t.size)
        else:
            rows.append((layer, t.size))
    return rows


# ---------------------------------------------------------------------------
# model file format


def _config_to_blob(config: ModelConfig) -> bytes:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _config_from_blob(blob: bytes) -> ModelConfig:
    known = {f.name: f.type for f in fields(ModelConfig)}
    values = {}
    for lineno, line in enumerate(blob.decode("utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep or key not in known:
            raise FormatError(f"model config blob line {lineno}: bad entry {line!r}")
        if raw in ("true", "false"):
            values[key] = raw == "true"
        else:
            try:
                values[key] = int(raw)
            except ValueError:
                raise FormatError(
                    f"model config blob line {lineno}: bad value {raw!r}"
                ) from None
    missing = set(known) - set(values)
    if missing:
        raise FormatError(f"model config blob is missing keys: {sorted(missing)}")
    return ModelConfig(**values)


def save_model(model: Model, path) -> None:
    """Write the SRNM file: magic, config blob, then raw f32 parameters."""
    blob = _config_to_blob(model.config)
    with open(path, "wb") as fh:
        fh.write(SRNM_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, t in model.params().items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", t.size))
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_model(path) -> Model:
    """Read an SRNM file; raises FormatError with byte offsets on corruption."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8:
        raise FormatError(f"truncated model file: {len(buf)} bytes, need >= 8")
    if buf[:4] != SRNM_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r} at offset 0 (want {SRNM_MAGIC!r})")
    (blob_len,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    if pos + blob_len > len(buf):
        raise FormatError(f"truncated config blob at offset {pos}: "
                          f"need {blob_len} bytes, have {len(buf) - pos}")
    config = _config_from_blob(buf[pos:pos + blob_len])
    pos += blob_len
    model = build_network(config)
    dtype = default_dtype()
    for name, t in model.params().items():
        if pos + 2 > len(buf):
            raise FormatError(f"truncated parameter header at offset {pos}")
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + name_len + 4 > len(buf):
            raise FormatError(f"truncated parameter record at offset {pos}")
        got_name = buf[pos:pos + name_len].decode("utf-8")
        if got_name != name:
            raise FormatError(
                f"parameter order mismatch at offset {pos}: "
                f"expected {name!r}, found {got_name!r}"
            )
        pos += name_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if count != t.size:
            raise FormatError(
                f"parameter {name!r} at offset {pos}: expected {t.size} "
                f"elements, file declares {count}"
            )
        nbytes = 4 * count
        if pos + nbytes > len(buf):
            raise FormatError(f"truncated payload for {name!r} at offset {pos}: "
                              f"need {nbytes} bytes, have {len(buf) - pos}")
        vals = np.frombuffer(buf, dtype="<f4", count=count, offset=pos)
        t.data = vals.reshape(t.shape).astype(dtype)
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes at offset {pos}")
    return model
