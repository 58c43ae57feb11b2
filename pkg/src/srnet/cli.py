"""Command line entry points.

Subcommands: ``gen`` renders a synthetic dataset, ``train`` fits a model and
logs per-epoch metrics (with a curves figure next to the log), ``infer`` and
``eval`` apply a saved model, ``gradcheck`` verifies gradients against finite
differences, ``params`` prints the layer-by-layer parameter budget, and
``ablate`` retrains reduced variants and tabulates them.

Exit codes: 0 on success, 1 for bad arguments/files/configs, 2 when a
computation fails at runtime (diverged training, failed gradient check).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checks import check_names, run_gradchecks
from .data import (
    DataError,
    SynthSpec,
    generate_dataset,
    load_pairs,
    read_manifest,
    read_rgb,
    write_cube,
)
from .model import (
    REFERENCE_PARAM_COUNT,
    ModelConfig,
    build_network,
    count_params,
    load_model,
    param_breakdown,
    save_model,
)
from .report import (
    AblationRow,
    ablation_figure,
    ablation_table,
    format_epoch_header,
    format_epoch_row,
    format_metrics,
    training_figure,
)
from .tensor import Tensor, default_dtype, no_grad
from .training import TrainConfig, evaluate, train

__all__ = ["main"]


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse normally exits with status 2 on bad flags; we want 1."""

    def error(self, message):
        raise _ArgError(message)


def _model_config(args, bands: int) -> ModelConfig:
    return ModelConfig(
        stem_width=args.stem_width,
        rdab_convs=args.rdab_convs,
        rdab_growth=args.rdab_growth,
        scales=args.scales,
        dense_layers=args.dense_layers,
        dense_growth=args.dense_growth,
        reduction=args.reduction,
        out_bands=bands,
        use_coordconv=not getattr(args, "no_coordconv", False),
        use_cbam=not getattr(args, "no_cbam", False),
        seed=args.seed,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        batch_size=args.batch,
        patch=args.patch,
        lr_start=args.lr_start,
        lr_end=args.lr_end,
        seed=args.seed,
    )


def _split_pairs(pairs, val_count):
    if val_count is None:
        val_count = max(1, len(pairs) // 8)
    if val_count < 0:
        raise DataError(f"val-count must be >= 0, got {val_count}")
    if val_count >= len(pairs):
        raise DataError(
            f"val-count {val_count} leaves no training pairs "
            f"(dataset has {len(pairs)})"
        )
    cut = len(pairs) - val_count
    return pairs[:cut], pairs[cut:]


def _run_schedule(model, train_pairs, val_pairs, tcfg, log_path, echo):
    """Train with the per-epoch log streamed to ``log_path``."""
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(format_epoch_header() + "\n")

        def on_epoch(rec):
            fh.write(format_epoch_row(rec) + "\n")
            fh.flush()
            if echo:
                print(f"epoch {rec.epoch}/{tcfg.epochs}  "
                      f"loss {rec.train_loss:.4g}  val MRAE {rec.val_mrae:.4g}")

        return train(model, train_pairs, val_pairs, tcfg, on_epoch=on_epoch)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen(args) -> int:
    if args.seed < 0:
        raise DataError(f"seed must be >= 0, got {args.seed}")
    spec = SynthSpec(bands=args.bands, height=args.height, width=args.width)
    manifest = generate_dataset(args.out, args.count, spec, args.seed)
    print(format_metrics({
        "out": str(Path(args.out)),
        "count": len(manifest.entries),
        "seed": args.seed,
        "manifest": str(Path(args.out) / "manifest.tsv"),
    }, args.pretty))
    return 0


def _cmd_train(args) -> int:
    pairs = load_pairs(read_manifest(args.data))
    train_pairs, val_pairs = _split_pairs(pairs, args.val_count)
    bands = pairs[0][1].shape[0]
    model = build_network(_model_config(args, bands))
    tcfg = _train_config(args)

    out_path = Path(args.out)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else \
        out_path.with_name(out_path.stem + "_log.tsv")
    fig_path = Path(args.figure) if args.figure else \
        out_path.with_name(out_path.stem + "_curves.png")

    before = evaluate(model, val_pairs)
    records = _run_schedule(model, train_pairs, val_pairs, tcfg,
                            log_path, args.pretty)
    save_model(model, out_path)
    training_figure(records, fig_path)

    last = records[-1]
    print(format_metrics({
        "model": str(out_path),
        "params": count_params(model),
        "epochs": tcfg.epochs,
        "train_loss": last.train_loss,
        "train_mrae": last.train_mrae,
        "untrained_val_mrae": before.mrae,
        "val_mrae": last.val_mrae,
        "val_rmse": last.val_rmse,
        "val_ssim": last.val_ssim,
        "log": str(log_path),
        "figure": str(fig_path),
    }, args.pretty))
    return 0


def _cmd_infer(args) -> int:
    model = load_model(args.model)
    rgb = read_rgb(args.rgb)
    with no_grad():
        pred = model.forward(Tensor(rgb[None].astype(default_dtype()))).data[0]
    cube = np.clip(pred, 0.0, 1.0).astype(np.float32)
    write_cube(args.out, cube)
    print(format_metrics({
        "out": str(args.out),
        "bands": cube.shape[0],
        "height": cube.shape[1],
        "width": cube.shape[2],
    }, args.pretty))
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    pairs = load_pairs(read_manifest(args.data))
    bands = pairs[0][1].shape[0]
    if bands != model.config.out_bands:
        raise DataError(
            f"model predicts {model.config.out_bands} bands, "
            f"dataset has {bands}"
        )
    rep = evaluate(model, pairs)
    print(format_metrics({
        "count": len(pairs),
        "mrae": rep.mrae,
        "rmse": rep.rmse,
        "ssim": rep.ssim,
    }, args.pretty))
    return 0


def _cmd_gradcheck(args) -> int:
    if args.list:
        print("\n".join(check_names()))
        return 0
    names = args.only.split(",") if args.only else None
    results = run_gradchecks(names, seed=args.seed, tol=args.tol)
    print("check\tmax_rel_err\tseconds\tstatus")
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.name}\t{r.max_rel_err!r}\t{r.seconds:.3f}\t{status}")
    bad = [r.name for r in results if not r.ok]
    if bad:
        print(f"error: gradient check failed for: {', '.join(bad)}",
              file=sys.stderr)
        return 2
    return 0


def _cmd_params(args) -> int:
    model = build_network(_model_config(args, args.bands))
    print("layer\tparams")
    for name, n in param_breakdown(model):
        print(f"{name}\t{n}")
    total = count_params(model)
    print(f"total\t{total}")
    print(f"reference\t{REFERENCE_PARAM_COUNT}")
    print(f"ratio\t{total / REFERENCE_PARAM_COUNT!r}")
    return 0


def _cmd_ablate(args) -> int:
    pairs = load_pairs(read_manifest(args.data))
    train_pairs, val_pairs = _split_pairs(pairs, args.val_count)
    bands = pairs[0][1].shape[0]
    base = _model_config(args, bands)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    variants = [
        ("full", base),
        ("no_cbam", replace(base, use_cbam=False)),
        ("no_coordconv", replace(base, use_coordconv=False)),
    ]
    rows = []
    for name, cfg in variants:
        model = build_network(cfg)
        tcfg = _train_config(args)
        _run_schedule(model, train_pairs, val_pairs, tcfg,
                      out_dir / f"{name}_log.tsv", args.pretty)
        rep = evaluate(model, val_pairs)
        save_model(model, out_dir / f"{name}.srnm")
        rows.append(AblationRow(name, count_params(model),
                                rep.mrae, rep.rmse, rep.ssim))

    table = ablation_table(rows)
    table_path = out_dir / "ablation.tsv"
    table_path.write_text(table, encoding="utf-8")
    ablation_figure(rows, out_dir / "ablation.png")
    print(table, end="")
    print(format_metrics({
        "table": str(table_path),
        "figure": str(out_dir / "ablation.png"),
    }, args.pretty))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_model_flags(p, with_toggles: bool = True) -> None:
    p.add_argument("--stem-width", type=int, default=32,
                   help="channels out of the stem and through the U path")
    p.add_argument("--scales", type=int, default=3,
                   help="resolution levels in the U path")
    p.add_argument("--rdab-convs", type=int, default=4,
                   help="dense conv layers inside each block")
    p.add_argument("--rdab-growth", type=int, default=16,
                   help="channels added by each dense conv in a block")
    p.add_argument("--dense-layers", type=int, default=4,
                   help="layers in the full-resolution dense branch")
    p.add_argument("--dense-growth", type=int, default=16,
                   help="channels added per dense-branch layer")
    p.add_argument("--reduction", type=int, default=8,
                   help="bottleneck ratio of the channel attention MLP")
    if with_toggles:
        p.add_argument("--no-coordconv", action="store_true",
                       help="drop the coordinate channels from the stem")
        p.add_argument("--no-cbam", action="store_true",
                       help="drop channel and spatial attention from blocks")


def _add_train_flags(p) -> None:
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--steps-per-epoch", type=int, default=8)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--patch", type=int, default=20)
    p.add_argument("--lr-start", type=float, default=1e-3)
    p.add_argument("--lr-end", type=float, default=1e-5)
    p.add_argument("--val-count", type=int, default=None,
                   help="manifest entries held out for validation "
                        "(default: one eighth)")


def _build_parser() -> _Parser:
    parser = _Parser(prog="srnet",
                     description="Spectral reconstruction toolkit")
    common = _Parser(add_help=False)
    common.add_argument("--pretty", action="store_true",
                        help="human-readable output instead of key=value")
    common.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common],
                       help="render a synthetic RGB/cube dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=31)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", parents=[common],
                       help="fit a model on a dataset manifest")
    p.add_argument("--data", required=True, help="path to manifest.tsv")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", default=None,
                   help="epoch log path (default: next to the model)")
    p.add_argument("--figure", default=None,
                   help="curves png path (default: next to the log)")
    _add_train_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", parents=[common],
                       help="reconstruct a cube from one RGB image")
    p.add_argument("--model", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", parents=[common],
                       help="score a model against a dataset manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="compare analytic gradients to finite differences")
    p.add_argument("--only", default=None,
                   help="comma-separated subset of check names")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--list", action="store_true",
                   help="print available check names and exit")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("params", parents=[common],
                       help="print the per-layer parameter budget")
    p.add_argument("--bands", type=int, default=31)
    _add_model_flags(p)
    p.set_defaults(func=_cmd_params)

    p = sub.add_parser("ablate", parents=[common],
                       help="retrain reduced variants and tabulate them")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="directory for table/figures")
    _add_train_flags(p)
    _add_model_flags(p, with_toggles=False)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
