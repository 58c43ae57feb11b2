"""Patch-based training loop with Adam and an exponential lr decay.

Each epoch draws fresh random patches from the training pairs, runs a few
optimizer steps, then scores the validation pairs at full resolution. All
randomness flows from the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import DataError
from .metrics import MetricReport, SsimParams, loss_total, mrae, rmse, ssim_value
from .model import Model
from .tensor import Tensor, backward, default_dtype, no_grad, reset_tape

__all__ = [
    "AdamState",
    "EpochRecord",
    "TrainConfig",
    "TrainingError",
    "adam_step",
    "evaluate",
    "lr_at",
    "sample_patches",
    "train",
]


class TrainingError(RuntimeError):
    """Training cannot continue (diverged loss, bad schedule query)."""


@dataclass
class TrainConfig:
    """Optimization hyperparameters; defaults follow the published schedule
    (1e-3 decaying to 1e-5 over 500 epochs, batches of eight 20x20 patches)."""

    epochs: int = 500
    steps_per_epoch: int = 8
    batch_size: int = 8
    patch: int = 20
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise DataError("epochs, steps_per_epoch and batch_size must be >= 1")
        if self.patch < 1:
            raise DataError(f"patch must be >= 1, got {self.patch}")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise DataError("learning rates must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise DataError("betas must lie in [0, 1)")


@dataclass
class EpochRecord:
    """One row of the training log."""

    epoch: int
    lr: float
    train_loss: float
    train_mrae: float
    val_mrae: float
    val_rmse: float
    val_ssim: float


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate after ``epoch`` of ``cfg.epochs`` total.

    Exponential interpolation from lr_start to lr_end; the endpoints are
    returned exactly rather than through the power expression.
    """
    if not 0 <= epoch <= cfg.epochs:
        raise TrainingError(
            f"epoch {epoch} outside schedule range [0, {cfg.epochs}]"
        )
    if epoch == 0:
        return cfg.lr_start
    if epoch == cfg.epochs:
        return cfg.lr_end
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (epoch / cfg.epochs)


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter mapping."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update in place; parameters without a gradient
    are left untouched."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def sample_patches(pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                   count: int, patch: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``count`` aligned (rgb, cube) patches at uniform random positions.

    Images are visited in shuffled order without replacement (reshuffling
    once exhausted), so small datasets get even coverage per batch.
    """
    if not pairs:
        raise DataError("cannot sample patches from an empty pair list")
    for rgb, cube in pairs:
        h, w = rgb.shape[1:]
        if h < patch or w < patch:
            raise DataError(
                f"patch size {patch} exceeds an image of {h}x{w}"
            )
    order: list[int] = []
    while len(order) < count:
        order.extend(rng.permutation(len(pairs))[:count - len(order)])
    xs, ys = [], []
    for i in order:
        rgb, cube = pairs[i]
        h, w = rgb.shape[1:]
        top = int(rng.integers(h - patch + 1))
        left = int(rng.integers(w - patch + 1))
        xs.append(rgb[:, top:top + patch, left:left + patch])
        ys.append(cube[:, top:top + patch, left:left + patch])
    return np.stack(xs), np.stack(ys)


def evaluate(model: Model, pairs: Sequence[tuple[np.ndarray, np.ndarray]],
             ssim_params: SsimParams | None = None) -> MetricReport:
    """Score full images: predictions are clamped to [0, 1] and metrics are
    computed in float64, averaged over the pairs."""
    if not pairs:
        raise DataError("evaluate needs at least one image pair")
    sums = np.zeros(3, dtype=np.float64)
    with no_grad():
        for rgb, cube in pairs:
            x = Tensor(rgb[None].astype(default_dtype()))
            pred = model.forward(x).data[0].astype(np.float64)
            pred = np.clip(pred, 0.0, 1.0)
            gt = cube.astype(np.float64)
            sums += (mrae(pred, gt), rmse(pred, gt), ssim_value(pred, gt, ssim_params))
    sums /= len(pairs)
    return MetricReport(mrae=float(sums[0]), rmse=float(sums[1]),
                        ssim=float(sums[2]))


def train(model: Model,
          train_pairs: Sequence[tuple[np.ndarray, np.ndarray]],
          val_pairs: Sequence[tuple[np.ndarray, np.ndarray]],
          cfg: TrainConfig,
          on_epoch: Callable[[EpochRecord], None] | None = None,
          ) -> list[EpochRecord]:
    """Run the full schedule and return one record per epoch.

    Raises TrainingError as soon as the loss stops being finite.
    """
    cfg.validate()
    if not train_pairs:
        raise DataError("train needs at least one training pair")
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    state = AdamState()
    dtype = default_dtype()
    records: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(epoch - 1, cfg)
        loss_sum = 0.0
        mrae_sum = 0.0
        for step in range(cfg.steps_per_epoch):
            xb, yb = sample_patches(train_pairs, cfg.batch_size, cfg.patch, rng)
            reset_tape()
            x = Tensor(xb.astype(dtype))
            y = Tensor(yb.astype(dtype))
            pred = model.forward(x)
            loss = loss_total(pred, y)
            value = loss.item()
            if not np.isfinite(value):
                reset_tape()
                raise TrainingError(
                    f"non-finite loss {value!r} at epoch {epoch} step {step + 1}"
                )
            model.zero_grad()
            backward(loss)
            adam_step(params, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            loss_sum += value
            mrae_sum += mrae(pred.data, yb)
            reset_tape()
        if val_pairs:
            report = evaluate(model, val_pairs)
            val = (report.mrae, report.rmse, report.ssim)
        else:
            val = (float("nan"),) * 3
        rec = EpochRecord(
            epoch=epoch,
            lr=lr,
            train_loss=loss_sum / cfg.steps_per_epoch,
            train_mrae=mrae_sum / cfg.steps_per_epoch,
            val_mrae=val[0],
            val_rmse=val[1],
            val_ssim=val[2],
        )
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return records
