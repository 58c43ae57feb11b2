"""Finite-difference verification of taped gradients.

Runs in 64-bit mode only: central differences at 32-bit lose too many
digits to separate real gradient bugs from roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Precision, Tensor, backward, no_grad, reset_tape, use_precision

__all__ = ["GradCheckError", "GradCheckReport", "grad_check"]


class GradCheckError(RuntimeError):
    """The checked function produced a non-finite value."""


@dataclass
class GradCheckReport:
    """Per-input maximum relative error between taped and numeric gradients."""

    per_input: list[float] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max(self.per_input) if self.per_input else 0.0

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol


def _eval_scalar(fn, inputs, where: str) -> float:
    with no_grad():
        out = fn(*inputs)
    v = out.item()
    if not np.isfinite(v):
        raise GradCheckError(f"non-finite value ({v}) at {where}")
    return v


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-5, tol: float = 1e-4,
               max_per_input: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare taped gradients of ``fn(*inputs)`` against central differences.

    ``fn`` must return a scalar tensor. Every input must be a 64-bit
    requires-grad tensor; its elements are perturbed in place and restored.
    ``max_per_input`` caps the number of elements probed per input (sampled
    with ``rng``), which keeps whole-model checks tractable.
    """
    for i, t in enumerate(inputs):
        if t.dtype != np.float64:
            raise GradCheckError(f"gradient checks need 64-bit inputs; "
                                 f"input {i} is {t.dtype}")
        if not t.requires_grad:
            raise GradCheckError(f"input {i} does not require gradients")
    rng = rng or np.random.default_rng(0)

    with use_precision(Precision.CHECK64):
        reset_tape()
        for t in inputs:
            t.zero_grad()
        out = fn(*inputs)
        base = out.item()
        if not np.isfinite(base):
            raise GradCheckError(f"non-finite value ({base}) at base evaluation")
        backward(out)

        report = GradCheckReport(tol=tol)
        for t in inputs:
            g_ad = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            g_flat = g_ad.reshape(-1)
            n = flat.size
            if max_per_input is not None and n > max_per_input:
                picks = rng.choice(n, size=max_per_input, replace=False)
            else:
                picks = range(n)
            worst = 0.0
            for j in picks:
                orig = flat[j]
                flat[j] = orig + eps
                f_plus = _eval_scalar(fn, inputs, f"+eps perturbation of element {j}")
                flat[j] = orig - eps
                f_minus = _eval_scalar(fn, inputs, f"-eps perturbation of element {j}")
                flat[j] = orig
                g_fd = (f_plus - f_minus) / (2.0 * eps)
                denom = max(abs(g_flat[j]), abs(g_fd), 1e-8)
                worst = max(worst, abs(g_flat[j] - g_fd) / denom)
            report.per_input.append(worst)
        reset_tape()
    return report
