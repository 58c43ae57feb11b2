"""Rank-4 tensors with taped reverse-mode differentiation.

Every value is a (batch, channel, height, width) array. Operations record
nodes on a thread-local tape in forward execution order; ``backward`` walks
the tape in reverse and accumulates gradients into every tensor that
requires them. The tape is meant to be rebuilt for each forward pass
(call ``reset_tape`` before the pass, or wrap metric-only evaluation in
``no_grad``).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "DimensionError",
    "Precision",
    "Tensor",
    "TapeNode",
    "add_broadcast",
    "backward",
    "concat_channels",
    "conv2d",
    "conv_transpose2d",
    "div_broadcast",
    "maxpool2d",
    "mean_all",
    "mul_broadcast",
    "no_grad",
    "pointwise",
    "reduce",
    "relu",
    "reset_tape",
    "reshape",
    "sigmoid",
    "slice_channels",
    "sub_broadcast",
    "sum_all",
    "tape_nodes",
    "use_precision",
]

# Sigmoid saturation guards: inputs are clamped at +-40 before exp, outputs
# clipped inside the open interval (0, 1). The output clip only bites in
# 64-bit mode; in 32-bit it is a no-op because 1 - 1e-16 rounds to 1.
_SIGMOID_CLAMP = 40.0
_SIGMOID_LO = 1e-18
_SIGMOID_HI = 1.0 - 1e-16


class DimensionError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class Precision(Enum):
    """Floating-point mode: 32-bit for training, 64-bit for gradient checks."""

    TRAIN32 = "train32"
    CHECK64 = "check64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.TRAIN32 else np.float64)


_state = threading.local()


def _st():
    if not hasattr(_state, "tape"):
        _state.tape = []
        _state.grad_enabled = True
        _state.precision = Precision.TRAIN32
    return _state


def default_dtype() -> np.dtype:
    """Dtype implied by the current precision mode."""
    return _st().precision.dtype


@contextmanager
def use_precision(mode: Precision):
    """Temporarily switch the default dtype for newly created tensors."""
    st = _st()
    prev = st.precision
    st.precision = mode
    try:
        yield
    finally:
        st.precision = prev


@contextmanager
def no_grad():
    """Disable taping; forward math runs without recording nodes."""
    st = _st()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


def reset_tape() -> None:
    """Drop all recorded nodes (start of a fresh forward pass)."""
    _st().tape = []


def tape_nodes() -> list["TapeNode"]:
    """Snapshot of the current tape, in forward execution order."""
    return list(_st().tape)


class Tensor:
    """A rank-4 array with an optional gradient slot.

    ``data`` is never mutated by operations; gradients may share storage
    between tensors, so treat ``grad`` arrays as read-only.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        keep_dtype = isinstance(data, np.ndarray)  # lists follow the precision mode
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not keep_dtype or arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        if arr.ndim != 4:
            raise DimensionError(
                f"tensors are rank-4 (n, c, h, w); got shape {arr.shape}"
            )
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(
                f"item() needs a single-element tensor, got {self.shape}"
            )
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return (
            f"Tensor(shape={self.shape}, dtype={self.data.dtype}, "
            f"requires_grad={self.requires_grad})"
        )

    # Arithmetic sugar; scalars are wrapped as constant (1,1,1,1) tensors.
    def __add__(self, other):
        return add_broadcast(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add_broadcast(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub_broadcast(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub_broadcast(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul_broadcast(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul_broadcast(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div_broadcast(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div_broadcast(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul_broadcast(self, _as_tensor(-1.0, self.dtype))


def scalar(value: float, dtype=None, requires_grad: bool = False) -> Tensor:
    """A (1,1,1,1) tensor holding one value."""
    return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype or default_dtype()),
                  requires_grad=requires_grad)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return scalar(float(value), dtype=dtype)
    raise TypeError(f"cannot use {type(value).__name__} as a tensor operand")


@dataclass
class TapeNode:
    """One recorded operation: its inputs and how to push gradients back."""

    op: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


def _tracking(*tensors: Tensor) -> bool:
    return _st().grad_enabled and any(t.requires_grad for t in tensors)


def _tape(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
          backward_fn) -> Tensor:
    out = Tensor(out_data, requires_grad=True)
    _st().tape.append(TapeNode(op, inputs, out, backward_fn))
    return out


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(t) into ``t.grad`` for every reachable tensor.

    ``out`` must be a (1,1,1,1) scalar produced on the current tape (or a
    requires-grad leaf). Repeated calls without clearing gradients
    accumulate.
    """
    if out.shape != (1, 1, 1, 1):
        raise DimensionError(
            f"backward needs a scalar (1,1,1,1) output, got {out.shape}"
        )
    if not out.requires_grad:
        raise ValueError("backward target does not participate in gradients")
    flow: dict[int, np.ndarray] = {id(out): np.ones((1, 1, 1, 1), out.data.dtype)}
    holders: dict[int, Tensor] = {id(out): out}
    for node in reversed(_st().tape):
        g = flow.pop(id(node.out), None)
        if g is None:
            continue
        holders.pop(id(node.out), None)
        t = node.out
        t.grad = g if t.grad is None else t.grad + g
        for inp, gin in zip(node.inputs, node.backward_fn(g)):
            if gin is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in flow:
                flow[key] = flow[key] + gin
            else:
                flow[key] = gin
                holders[key] = inp
    for key, g in flow.items():
        t = holders[key]
        t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# elementwise / broadcast ops


def _check_broadcast(a: Tensor, b: Tensor) -> tuple[int, ...]:
    out = []
    for da, db in zip(a.shape, b.shape):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise DimensionError(
                f"shapes {a.shape} and {b.shape} are not broadcast-compatible"
            )
    return tuple(out)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i, (d, gd) in enumerate(zip(shape, g.shape)) if d == 1 and gd > 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def add_broadcast(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; dims of size 1 broadcast, their gradients are summed."""
    _check_broadcast(a, b)
    out = a.data + b.data
    if not _tracking(a, b):
        return Tensor(out)
    return _tape("add", (a, b), out,
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub_broadcast(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out = a.data - b.data
    if not _tracking(a, b):
        return Tensor(out)
    return _tape("sub", (a, b), out,
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul_broadcast(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting (attention maps, scalings)."""
    _check_broadcast(a, b)
    out = a.data * b.data
    if not _tracking(a, b):
        return Tensor(out)
    return _tape("mul", (a, b), out,
                 lambda g: (_reduce_to(g * b.data, a.shape),
                            _reduce_to(g * a.data, b.shape)))


def div_broadcast(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out = a.data / b.data
    if not _tracking(a, b):
        return Tensor(out)

    def bwd(g):
        return (_reduce_to(g / b.data, a.shape),
                _reduce_to(-g * out / b.data, b.shape))

    return _tape("div", (a, b), out, bwd)


def pointwise(x: Tensor, fn: str) -> Tensor:
    """Elementwise nonlinearity: ``"relu"`` or ``"sigmoid"``."""
    if fn == "relu":
        out = np.maximum(x.data, 0)
        if not _tracking(x):
            return Tensor(out)
        mask = x.data > 0
        return _tape("relu", (x,), out, lambda g: (g * mask,))
    if fn == "sigmoid":
        z = np.clip(x.data, -_SIGMOID_CLAMP, _SIGMOID_CLAMP)
        out = 1.0 / (1.0 + np.exp(-z))
        np.clip(out, _SIGMOID_LO, _SIGMOID_HI, out=out)
        if not _tracking(x):
            return Tensor(out)
        return _tape("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))
    raise ValueError(f"unknown pointwise function {fn!r} (want 'relu' or 'sigmoid')")


def relu(x: Tensor) -> Tensor:
    return pointwise(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return pointwise(x, "sigmoid")


# ---------------------------------------------------------------------------
# structural ops


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Stack tensors along the channel axis, preserving order."""
    parts = tuple(parts)  # callers may keep mutating their list
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        pn, _, ph, pw = p.shape
        if (pn, ph, pw) != (n, h, w):
            raise DimensionError(
                f"concat parts must share (n, h, w); got {parts[0].shape} vs {p.shape}"
            )
    out = np.concatenate([p.data for p in parts], axis=1)
    if not _tracking(*parts):
        return Tensor(out)
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _tape("concat", tuple(parts), out, bwd)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channels ``[start, stop)`` of ``x`` (the inverse of concat)."""
    c = x.shape[1]
    if not (0 <= start < stop <= c):
        raise DimensionError(f"channel slice [{start}:{stop}) out of range for c={c}")
    out = x.data[:, start:stop].copy()
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _tape("slice", (x,), out, bwd)


def reshape(x: Tensor, shape: tuple[int, int, int, int]) -> Tensor:
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    out = x.data.reshape(shape)
    if not _tracking(x):
        return Tensor(out)
    return _tape("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# reductions


def reduce(x: Tensor, axis: str, stat: str) -> Tensor:
    """Pool over ``"spatial"`` (h,w) or ``"channel"`` dims with mean or max.

    Spatial reduction yields (n,c,1,1), channel reduction (n,1,h,w). Max
    routes its gradient to the first maximal element in row-major scan
    order.
    """
    if axis not in ("spatial", "channel"):
        raise ValueError(f"axis must be 'spatial' or 'channel', got {axis!r}")
    if stat not in ("mean", "max"):
        raise ValueError(f"stat must be 'mean' or 'max', got {stat!r}")
    n, c, h, w = x.shape

    if axis == "spatial":
        if stat == "mean":
            out = x.data.mean(axis=(2, 3), keepdims=True)
            if not _tracking(x):
                return Tensor(out)
            denom = h * w
            return _tape("reduce_spatial_mean", (x,), out,
                         lambda g: (np.broadcast_to(g / denom, x.shape),))
        flat = x.data.reshape(n, c, h * w)
        idx = flat.argmax(axis=2)[..., None]
        out = np.take_along_axis(flat, idx, axis=2).reshape(n, c, 1, 1)
        if not _tracking(x):
            return Tensor(out)

        def bwd_smax(g):
            gx = np.zeros((n, c, h * w), dtype=g.dtype)
            np.put_along_axis(gx, idx, g.reshape(n, c, 1), axis=2)
            return (gx.reshape(x.shape),)

        return _tape("reduce_spatial_max", (x,), out, bwd_smax)

    if stat == "mean":
        out = x.data.mean(axis=1, keepdims=True)
        if not _tracking(x):
            return Tensor(out)
        return _tape("reduce_channel_mean", (x,), out,
                     lambda g: (np.broadcast_to(g / c, x.shape),))
    idx = x.data.argmax(axis=1)[:, None]
    out = np.take_along_axis(x.data, idx, axis=1)
    if not _tracking(x):
        return Tensor(out)

    def bwd_cmax(g):
        gx = np.zeros_like(x.data, dtype=g.dtype)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return _tape("reduce_channel_max", (x,), out, bwd_cmax)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements as a (1,1,1,1) tensor."""
    out = x.data.sum(dtype=x.data.dtype).reshape(1, 1, 1, 1)
    if not _tracking(x):
        return Tensor(out)
    return _tape("sum_all", (x,), out,
                 lambda g: (np.broadcast_to(g, x.shape),))


def mean_all(x: Tensor) -> Tensor:
    """Mean of all elements as a (1,1,1,1) tensor."""
    denom = x.size
    out = (x.data.sum(dtype=x.data.dtype) / denom).reshape(1, 1, 1, 1)
    if not _tracking(x):
        return Tensor(out)
    return _tape("mean_all", (x,), out,
                 lambda g: (np.broadcast_to(g / denom, x.shape),))


# ---------------------------------------------------------------------------
# convolution family


def _im2col(xp: np.ndarray, k: int, stride: int):
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * k * k)
    return cols, ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` with ``weight`` (c_out, c_in, k, k).

    Zero padding; use pad = (k-1)//2 for same-size output at stride 1.
    ``bias``, when given, is a (1, c_out, 1, 1) tensor added per channel.
    """
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if pad < 0:
        raise ValueError(f"pad must be non-negative, got {pad}")
    n, c_in, h, w = x.shape
    c_out, wc_in, kh, kw = weight.shape
    if kh != kw:
        raise DimensionError(f"square kernels only, got {kh}x{kw}")
    if wc_in != c_in:
        raise DimensionError(
            f"input has {c_in} channels but weight expects {wc_in}"
        )
    if bias is not None and bias.shape != (1, c_out, 1, 1):
        raise DimensionError(
            f"bias must have shape (1, {c_out}, 1, 1), got {bias.shape}"
        )
    k = kh
    if h + 2 * pad < k or w + 2 * pad < k:
        raise DimensionError(
            f"kernel {k}x{k} does not fit padded input {h + 2 * pad}x{w + 2 * pad}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols, ho, wo = _im2col(xp, k, stride)
    wm = weight.data.reshape(c_out, -1)
    out2 = cols @ wm.T
    if bias is not None:
        out2 += bias.data.reshape(1, c_out)
    out = out2.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if not _tracking(*inputs):
        return Tensor(np.ascontiguousarray(out))

    def bwd(g):
        g_col = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        gw = (g_col.T @ cols).reshape(weight.shape)
        gx_cols = (g_col @ wm).reshape(n, ho, wo, c_in, k, k).transpose(
            0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                gxp[:, :, ki:ki + stride * ho:stride,
                    kj:kj + stride * wo:stride] += gx_cols[..., ki, kj]
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3)).reshape(1, c_out, 1, 1)

    return _tape("conv2d", inputs, np.ascontiguousarray(out), bwd)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 2) -> Tensor:
    """Transposed convolution; weight is (c_in, c_out, k, k).

    The forward map is the adjoint of ``conv2d`` with the same stride and
    no padding, so stride = k = 2 doubles the spatial dims exactly.
    """
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    n, c_in, h, w = x.shape
    wc_in, c_out, kh, kw = weight.shape
    if kh != kw:
        raise DimensionError(f"square kernels only, got {kh}x{kw}")
    if wc_in != c_in:
        raise DimensionError(
            f"input has {c_in} channels but weight expects {wc_in}"
        )
    if bias is not None and bias.shape != (1, c_out, 1, 1):
        raise DimensionError(
            f"bias must have shape (1, {c_out}, 1, 1), got {bias.shape}"
        )
    k = kh
    ho = (h - 1) * stride + k
    wo = (w - 1) * stride + k
    x2 = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, c_in)
    out = np.zeros((n, c_out, ho, wo), dtype=x.data.dtype)
    for ki in range(k):
        for kj in range(k):
            contrib = (x2 @ weight.data[:, :, ki, kj]).reshape(
                n, h, w, c_out).transpose(0, 3, 1, 2)
            out[:, :, ki:ki + stride * h:stride,
                kj:kj + stride * w:stride] += contrib
    if bias is not None:
        out += bias.data

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if not _tracking(*inputs):
        return Tensor(out)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        for ki in range(k):
            for kj in range(k):
                gs = g[:, :, ki:ki + stride * h:stride, kj:kj + stride * w:stride]
                gs2 = np.ascontiguousarray(gs.transpose(0, 2, 3, 1)).reshape(-1, c_out)
                gx += (gs2 @ weight.data[:, :, ki, kj].T).reshape(
                    n, h, w, c_in).transpose(0, 3, 1, 2)
                gw[:, :, ki, kj] = x2.T @ gs2
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3)).reshape(1, c_out, 1, 1)

    return _tape("conv_transpose2d", inputs, out, bwd)


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; dims must divide the window (no padding).

    Gradient flows to the first maximal element of each block in row-major
    scan order.
    """
    if window < 1:
        raise ValueError(f"window must be positive, got {window}")
    n, c, h, w = x.shape
    if h % window or w % window:
        raise DimensionError(
            f"spatial dims ({h}, {w}) must be divisible by window {window}"
        )
    ho, wo = h // window, w // window
    blocks = x.data.reshape(n, c, ho, window, wo, window).transpose(
        0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, window * window)
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1).reshape(n, c, ho, wo)
    if not _tracking(x):
        return Tensor(out)

    def bwd(g):
        gb = np.zeros((n, c, ho, wo, window * window), dtype=g.dtype)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        return (gb.reshape(n, c, ho, wo, window, window).transpose(
            0, 1, 2, 4, 3, 5).reshape(x.shape),)

    return _tape("maxpool2d", (x,), out, bwd)
