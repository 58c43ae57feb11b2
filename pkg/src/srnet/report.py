"""Tab-separated logs, key=value summaries and the figures drawn next to them.

Numbers in machine output use ``repr`` so they roundtrip exactly; the pretty
variants are for eyes only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .data import FormatError
from .training import EpochRecord

__all__ = [
    "AblationRow",
    "EPOCH_FIELDS",
    "ablation_figure",
    "ablation_table",
    "format_epoch_header",
    "format_epoch_row",
    "format_metrics",
    "read_epoch_log",
    "training_figure",
    "write_epoch_log",
]

EPOCH_FIELDS = ("epoch", "lr", "train_loss", "train_mrae",
                "val_mrae", "val_rmse", "val_ssim")


def _num(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def format_epoch_header() -> str:
    return "\t".join(EPOCH_FIELDS)


def format_epoch_row(rec: EpochRecord) -> str:
    return "\t".join(_num(getattr(rec, f)) for f in EPOCH_FIELDS)


def write_epoch_log(path, records: Sequence[EpochRecord]) -> None:
    lines = [format_epoch_header()]
    lines += [format_epoch_row(r) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_epoch_log(path) -> list[EpochRecord]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split("\t")) != EPOCH_FIELDS:
        raise FormatError(f"{path}: bad or missing epoch log header")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(EPOCH_FIELDS):
            raise FormatError(
                f"{path}: line {lineno} has {len(parts)} fields, "
                f"want {len(EPOCH_FIELDS)}"
            )
        try:
            records.append(EpochRecord(int(parts[0]),
                                       *(float(p) for p in parts[1:])))
        except ValueError:
            raise FormatError(f"{path}: line {lineno} has a non-numeric field") \
                from None
    return records


def format_metrics(pairs: dict, pretty: bool = False) -> str:
    """key=value lines, or an aligned human-readable block with ``pretty``."""
    if not pretty:
        return "\n".join(f"{k}={_num(v)}" for k, v in pairs.items())
    width = max(len(k) for k in pairs)
    out = []
    for k, v in pairs.items():
        shown = f"{v:.6g}" if isinstance(v, float) else str(v)
        out.append(f"{k.rjust(width)}  {shown}")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# ablation summaries


@dataclass
class AblationRow:
    variant: str
    params: int
    val_mrae: float
    val_rmse: float
    val_ssim: float


def ablation_table(rows: Sequence[AblationRow]) -> str:
    lines = ["variant\tparams\tval_mrae\tval_rmse\tval_ssim"]
    for r in rows:
        lines.append("\t".join([r.variant, str(r.params), repr(r.val_mrae),
                                repr(r.val_rmse), repr(r.val_ssim)]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# figures


def training_figure(records: Sequence[EpochRecord], path) -> None:
    """Loss/metric curves on top, the lr schedule below, one png."""
    if not records:
        raise ValueError("cannot plot an empty training log")
    epochs = [r.epoch for r in records]
    fig, (ax1, ax2) = plt.subplots(
        2, 1, figsize=(7.0, 6.0), sharex=True,
        gridspec_kw={"height_ratios": [3, 1]},
    )
    ax1.plot(epochs, [r.train_loss for r in records], label="train loss")
    ax1.plot(epochs, [r.train_mrae for r in records], label="train MRAE")
    if not math.isnan(records[0].val_mrae):
        ax1.plot(epochs, [r.val_mrae for r in records], label="val MRAE")
        ax1.plot(epochs, [1.0 - r.val_ssim for r in records],
                 label="val 1-SSIM")
    ax1.set_yscale("log")
    ax1.set_ylabel("value (log)")
    ax1.legend(loc="upper right", fontsize=8)
    ax1.grid(True, alpha=0.3)
    ax2.plot(epochs, [r.lr for r in records], color="tab:gray")
    ax2.set_yscale("log")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("lr")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_figure(rows: Sequence[AblationRow], path) -> None:
    """Bar chart of validation MRAE per variant, parameter counts on top."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs = range(len(rows))
    bars = ax.bar(xs, [r.val_mrae for r in rows], color="tab:blue", width=0.6)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r.variant for r in rows])
    ax.set_ylabel("validation MRAE")
    for bar, r in zip(bars, rows):
        ax.annotate(f"{r.params:,}",
                    (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
