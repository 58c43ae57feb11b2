"""Reconstruction metrics and the training loss.

``mrae``/``rmse`` are plain float64 numpy evaluations. ``ssim_map``/``ssim``
build a differentiable graph on tensors (single scale, Gaussian window,
border-renormalized so edge pixels average only over real neighbors), and
``loss_total`` combines mean squared error with the structural term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    conv2d,
    div_broadcast,
    mean_all,
    mul_broadcast,
    no_grad,
    reshape,
)

__all__ = [
    "MRAE_EPS",
    "MetricReport",
    "SsimParams",
    "loss_total",
    "mrae",
    "rmse",
    "ssim",
    "ssim_map",
    "ssim_value",
]

MRAE_EPS = 1e-6


@dataclass
class SsimParams:
    """Window and stability constants for the structural similarity index."""

    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def validate(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.sigma <= 0 or self.data_range <= 0:
            raise ValueError("sigma and data_range must be positive")


@dataclass
class MetricReport:
    """Averaged evaluation metrics over a set of image pairs."""

    mrae: float
    rmse: float
    ssim: float


# ---------------------------------------------------------------------------
# float64 array metrics


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise DimensionError(f"shape mismatch: {p.shape} vs {g.shape}")
    if p.size == 0:
        raise DimensionError("metrics need at least one element")
    return p, g


def mrae(pred, gt) -> float:
    """Mean relative absolute error, guarded by MRAE_EPS in the denominator."""
    p, g = _pair(pred, gt)
    return float(np.mean(np.abs(p - g) / (g + MRAE_EPS)))


def rmse(pred, gt) -> float:
    """Root mean squared error over all elements."""
    p, g = _pair(pred, gt)
    return float(np.sqrt(np.mean((p - g) ** 2)))


# ---------------------------------------------------------------------------
# structural similarity


_window_cache: dict[tuple, Tensor] = {}
_mask_cache: dict[tuple, Tensor] = {}


def _window(p: SsimParams, dtype) -> Tensor:
    key = (p.window, p.sigma, np.dtype(dtype).str)
    if key not in _window_cache:
        half = (p.window - 1) / 2.0
        xs = np.arange(p.window, dtype=np.float64) - half
        g = np.exp(-(xs * xs) / (2.0 * p.sigma * p.sigma))
        w = np.outer(g, g)
        w /= w.sum()
        _window_cache[key] = Tensor(
            w.reshape(1, 1, p.window, p.window).astype(dtype)
        )
    return _window_cache[key]


def _mask(h: int, w: int, p: SsimParams, dtype) -> Tensor:
    # windowed sum of ones: the fraction of each window lying inside the image
    key = (h, w, p.window, p.sigma, np.dtype(dtype).str)
    if key not in _mask_cache:
        with no_grad():
            ones = Tensor(np.ones((1, 1, h, w), dtype=dtype))
            m = conv2d(ones, _window(p, dtype), pad=(p.window - 1) // 2)
        _mask_cache[key] = Tensor(m.data)
    return _mask_cache[key]


def _const(v: float, dtype) -> Tensor:
    return Tensor(np.full((1, 1, 1, 1), v, dtype=dtype))


def ssim_map(x: Tensor, y: Tensor, params: SsimParams | None = None) -> Tensor:
    """Per-pixel similarity in (0, 1], same shape as the inputs.

    Bands are scored independently: the input is folded to a single-channel
    batch so the Gaussian window never mixes channels.
    """
    p = params or SsimParams()
    p.validate()
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    n, c, h, w = x.shape
    dt = np.promote_types(x.dtype, y.dtype)
    win = _window(p, dt)
    mask = _mask(h, w, p, dt)
    pad = (p.window - 1) // 2
    xr = reshape(x, (n * c, 1, h, w))
    yr = reshape(y, (n * c, 1, h, w))

    def wmean(t: Tensor) -> Tensor:
        return div_broadcast(conv2d(t, win, pad=pad), mask)

    mu_x = wmean(xr)
    mu_y = wmean(yr)
    var_x = wmean(mul_broadcast(xr, xr)) - mu_x * mu_x
    var_y = wmean(mul_broadcast(yr, yr)) - mu_y * mu_y
    cov = wmean(mul_broadcast(xr, yr)) - mu_x * mu_y

    c1 = _const((p.k1 * p.data_range) ** 2, dt)
    c2 = _const((p.k2 * p.data_range) ** 2, dt)
    two = _const(2.0, dt)
    num = (mu_x * mu_y * two + c1) * (cov * two + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return reshape(div_broadcast(num, den), (n, c, h, w))


def ssim(x: Tensor, y: Tensor, params: SsimParams | None = None) -> Tensor:
    """Mean of the similarity map as a scalar tensor."""
    return mean_all(ssim_map(x, y, params))


def ssim_value(pred, gt, params: SsimParams | None = None) -> float:
    """Similarity of two arrays, computed in float64 with no gradient."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.ndim == 3:
        p = p[None]
        g = g[None]
    with no_grad():
        return ssim(Tensor(p), Tensor(g), params).item()


def loss_total(pred: Tensor, target: Tensor,
               params: SsimParams | None = None) -> Tensor:
    """Mean squared error plus one minus mean similarity, as a scalar tensor."""
    diff = pred - target
    mse = mean_all(mul_broadcast(diff, diff))
    s = ssim(pred, target, params)
    dt = np.promote_types(pred.dtype, target.dtype)
    return mse + (_const(1.0, dt) - s)
