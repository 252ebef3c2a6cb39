"""Command-line interface.

Subcommands: gen-data, pretrain-mae, gen-pseudo, train-ranker, select,
evaluate, sweep (all stages end to end), visualize, report. Options beat the
config file, which beats defaults. Exit codes: 0 success, 2 config error,
3 stage failure. LTRP_OUT overrides the default output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, load_config
from .pipeline import STAGES, Paths, StageFailure, run_pipeline

__all__ = ["main", "build_parser"]

_PHASES = {"encoder": "before_encoder", "decoder": "before_decoder"}
_TARGETS = {"raw": "raw_pixels", "norm": "per_patch_norm"}


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_kr_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int, help="global seed")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--kr", type=_parse_kr_list, metavar="LIST", help="keep ratios, e.g. 0.75,0.5")
    parser.add_argument("--metric", choices=["l1", "psnr", "ssim"])
    parser.add_argument("--loss", choices=["listmle", "listnet", "ranknet", "regression"])
    parser.add_argument("--masking-ratio", type=float, dest="masking_ratio")
    parser.add_argument("--clustering-ratio", type=float, dest="clustering_ratio")
    parser.add_argument("--phase", choices=["encoder", "decoder"])
    parser.add_argument("--sparse", type=_parse_bool, metavar="BOOL")
    parser.add_argument("--target", choices=["raw", "norm"])
    parser.add_argument("--workers", type=int)
    parser.add_argument("--force", action="store_true", help="redo existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltrp", description="self-supervised patch-importance ranking pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": "generate the synthetic dataset",
        "pretrain-mae": "pre-train the masked autoencoder",
        "gen-pseudo": "generate the pseudo-score caches",
        "train-ranker": "train the patch ranker",
        "select": "compute per-image patch selections",
        "evaluate": "evaluate selections and write the report",
        "sweep": "run every stage in order",
        "visualize": "render score maps and keep maps for sample images",
        "report": "print the report summary",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "visualize":
            p.add_argument("--count", type=int, default=4, help="number of images to render")
            p.add_argument(
                "--image-format", choices=["png", "ppm"], default="png", dest="viz_format"
            )
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    pairs = {
        "seed": ("seed", None),
        "out": ("out_dir", None),
        "kr": ("selection.krs", None),
        "metric": ("scorer.metric", None),
        "loss": ("ranker.loss", None),
        "masking_ratio": ("scorer.masking_ratio", None),
        "clustering_ratio": ("selection.clustering_ratio", None),
        "phase": ("scorer.phase", _PHASES),
        "sparse": ("ranker.sparse", None),
        "target": ("mae.target_transform", _TARGETS),
        "workers": ("workers", None),
    }
    overrides = {}
    for attr, (path, mapping) in pairs.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        overrides[path] = mapping[value] if mapping else value
    if "out_dir" not in overrides and os.environ.get("LTRP_OUT"):
        overrides["out_dir"] = os.environ["LTRP_OUT"]
    return overrides


def _cmd_visualize(cfg: PipelineConfig, args: argparse.Namespace) -> None:
    from ..grid import patchify
    from ..selector import SelectionConfig, select_patches
    from .dataset import load_dataset
    from .pipeline import _grid, stage_select, stage_train_ranker
    from .visualize import render_score_map

    paths = Paths(Path(cfg.out_dir))
    ranker = stage_train_ranker(cfg, paths)
    dataset = load_dataset(paths.dataset)
    grid = _grid(cfg)
    out = paths.out / "visuals"
    out.mkdir(parents=True, exist_ok=True)
    _, heldout_ids = dataset.split(cfg.dataset.heldout_fraction)
    ext = args.viz_format
    for image_id in heldout_ids[: args.count]:
        image = dataset.image(image_id)
        scores = ranker.score_image(image, grid)
        render_score_map(image, scores, grid, "heat", out / f"{image_id}_heat.{ext}")
        for kr in cfg.selection.krs:
            sel = select_patches(
                scores,
                patchify(image, grid),
                SelectionConfig(
                    keep_ratio=kr,
                    clustering_ratio=cfg.selection.clustering_ratio,
                    knn_k=cfg.selection.knn_k,
                ),
            )
            render_score_map(
                image, sel, grid, "keep", out / f"{image_id}_keep_{kr}.{ext}"
            )
    print(f"wrote visuals for {min(args.count, len(heldout_ids))} images to {out}")


def _cmd_report(cfg: PipelineConfig) -> None:
    paths = Paths(Path(cfg.out_dir))
    if not paths.report_json.exists():
        raise ConfigError(f"no report at {paths.report_json}; run evaluate first")
    with open(paths.report_json, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    print(report["header"]["flops_convention"])
    print(f"config hash: {report['header']['config_hash']}")
    mae = report["mae"]
    print(
        f"mae heldout loss: trained {mae['trained_heldout_loss']:.6f} "
        f"vs untrained {mae['untrained_heldout_loss']:.6f}"
    )
    ranker = report["ranker"]
    print(
        f"ranker heldout kendall tau: {ranker['heldout_kendall_tau']:.4f} "
        f"(untrained {ranker['untrained_kendall_tau']:.4f}); "
        f"fg>bg fraction {ranker['fg_gt_bg_fraction']:.3f}"
    )
    print("kr     method  iou     f1      prec    recall  probe_acc  flops")
    for row in report["rows"]:
        fmt = lambda v: "   -  " if v is None else f"{v:.4f}"
        print(
            f"{row['kr']:<6} {row['method']:<7} {fmt(row['iou'])}  {fmt(row['f1'])}  "
            f"{fmt(row['precision'])}  {fmt(row['recall'])}  {fmt(row['probe_acc'])}     "
            f"{row['flops'] / 1e6:.1f}M"
        )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        paths = Paths(Path(cfg.out_dir))
        paths.out.mkdir(parents=True, exist_ok=True)
        stage_fns = dict(STAGES)
        if args.command == "sweep":
            run_pipeline(cfg, force=args.force, echo=True)
            print(f"report: {paths.report_json}")
        elif args.command == "visualize":
            _cmd_visualize(cfg, args)
        elif args.command == "report":
            _cmd_report(cfg)
        else:
            try:
                stage_fns[args.command](cfg, paths, force=args.force)
            except StageFailure:
                raise
            except Exception as exc:  # noqa: BLE001 - stage boundary
                raise StageFailure(args.command, exc) from exc
            print(f"{args.command}: done ({paths.out})")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
