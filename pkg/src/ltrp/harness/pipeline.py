"""Stage orchestration: dataset -> MAE -> pseudo scores -> ranker ->
selection -> evaluation -> report.

Every stage persists its artifact under the output directory and is skipped
when the artifact already exists (pass force to redo). Stage failures
surface as StageFailure with the stage name; partial state stays on disk.
The report is byte-reproducible for a fixed config and seed; the only
timestamp lives in the header's ``generated_at`` field.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .. import __version__
from ..evaluator.annotations import load_annotations, load_categories
from ..evaluator.flops import VitSpec, flops_estimate
from ..evaluator.metrics import foreground_mask, patch_metrics, selection_mask
from ..evaluator.probe import ProbeConfig, ProbeItem, train_probe
from ..grid import GridSpec, patchify, round_half_up
from ..oracle.mae import MAEConfig, ReconstructionModel, init_model, masked_loss, pretrain_mae
from ..oracle.synthetic import SyntheticReconstructor
from ..ranker.model import RankerConfig, RankerModel, init_ranker
from ..ranker.train import heldout_kendall_tau, train_ranker
from ..scorer import (
    build_training_instance,
    instance_from_record,
    instance_record_line,
    read_instance_cache,
)
from ..selector import SelectionConfig, select_patches
from .config import PipelineConfig, config_hash, config_to_dict, derive_seed
from .dataset import SyntheticDataset, gen_synthetic_dataset, load_dataset

__all__ = ["StageFailure", "Paths", "run_pipeline", "STAGES"]

FLOPS_CONVENTION = (
    "FLOPs counted as multiply-accumulates; layer-norm, softmax and "
    "activation ops excluded (sub-percent)."
)


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Paths:
    out: Path

    def __post_init__(self) -> None:
        self.out = Path(self.out)

    @property
    def dataset(self) -> Path:
        return self.out / "dataset"

    @property
    def mae_ckpt(self) -> Path:
        return self.out / "mae.ckpt"

    @property
    def mae_metrics(self) -> Path:
        return self.out / "mae_metrics.json"

    @property
    def pseudo_train(self) -> Path:
        return self.out / "pseudo_scores.jsonl"

    @property
    def pseudo_heldout(self) -> Path:
        return self.out / "pseudo_heldout.jsonl"

    @property
    def ranker_ckpt(self) -> Path:
        return self.out / "ranker.ckpt"

    @property
    def ranker_log(self) -> Path:
        return self.out / "ranker_log.csv"

    @property
    def ranker_metrics(self) -> Path:
        return self.out / "ranker_metrics.json"

    @property
    def score_maps(self) -> Path:
        return self.out / "score_maps.npz"

    @property
    def selections(self) -> Path:
        return self.out / "selections.json"

    @property
    def report_json(self) -> Path:
        return self.out / "report.json"

    @property
    def report_csv(self) -> Path:
        return self.out / "report.csv"

    @property
    def timings(self) -> Path:
        return self.out / "timings.json"


def _mae_config(cfg: PipelineConfig) -> MAEConfig:
    m = cfg.mae
    return MAEConfig(
        image_size=cfg.dataset.image_size,
        patch_size=cfg.patch_size,
        channels=3,
        enc_depth=m.enc_depth,
        enc_width=m.enc_width,
        enc_heads=m.enc_heads,
        dec_depth=m.dec_depth,
        dec_width=m.dec_width,
        dec_heads=m.dec_heads,
        target_transform=m.target_transform,
        masking_ratio=m.masking_ratio,
        epochs=m.epochs,
        batch_size=m.batch_size,
        lr=m.lr,
        seed=derive_seed(cfg.seed, "pretrain-mae"),
    )


def _ranker_config(cfg: PipelineConfig) -> RankerConfig:
    r = cfg.ranker
    return RankerConfig(
        image_size=cfg.dataset.image_size,
        patch_size=cfg.patch_size,
        channels=3,
        depth=r.depth,
        width=r.width,
        heads=r.heads,
        use_positions=r.use_positions,
        sparse=r.sparse,
        epochs=r.epochs,
        batch_size=r.batch_size,
        lr=r.lr,
        seed=derive_seed(cfg.seed, "train-ranker"),
    )


def _grid(cfg: PipelineConfig) -> GridSpec:
    return GridSpec.for_image(cfg.dataset.image_size, cfg.dataset.image_size, cfg.patch_size)


def _reconstructor(cfg: PipelineConfig, paths: Paths):
    if cfg.scorer.reconstructor == "synthetic":
        return SyntheticReconstructor(_grid(cfg))
    return ReconstructionModel.load(paths.mae_ckpt)


# ---------------------------------------------------------------- stages


def stage_gen_data(cfg: PipelineConfig, paths: Paths, force: bool = False) -> SyntheticDataset:
    if (paths.dataset / "meta.json").exists() and not force:
        return load_dataset(paths.dataset)
    seed = derive_seed(cfg.seed, "gen-data")
    return gen_synthetic_dataset(cfg.dataset, paths.dataset, seed)


def stage_pretrain_mae(cfg: PipelineConfig, paths: Paths, force: bool = False) -> ReconstructionModel:
    if paths.mae_ckpt.exists() and not force:
        return ReconstructionModel.load(paths.mae_ckpt)
    dataset = stage_gen_data(cfg, paths)
    train_ids, heldout_ids = dataset.split(cfg.dataset.heldout_fraction)
    mae_cfg = _mae_config(cfg)
    model = pretrain_mae(dataset.images(train_ids), mae_cfg)
    heldout_images = dataset.images(heldout_ids)
    eval_seed = derive_seed(cfg.seed, "mae-eval")
    untrained = init_model(mae_cfg, seed=derive_seed(cfg.seed, "mae-untrained"))
    metrics = {
        "epoch_losses": model.metadata["epoch_losses"],
        "trained_heldout_loss": masked_loss(model, heldout_images, seed=eval_seed),
        "untrained_heldout_loss": masked_loss(untrained, heldout_images, seed=eval_seed),
    }
    model.save(paths.mae_ckpt)
    with open(paths.mae_metrics, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
    model.metadata.update(metrics)
    return model


def _build_instance(args):
    image, grid, ratio, seed, recon, metric, phase = args
    return build_training_instance(image, grid, ratio, seed, recon, metric, phase)


def _gen_instances(cfg, dataset, ids, recon, seed_parts, workers: int):
    grid = _grid(cfg)
    sc = cfg.scorer
    jobs = []
    for image_id in ids:
        image = dataset.image(image_id)
        for j in range(sc.instances_per_image):
            seed = derive_seed(cfg.seed, "gen-pseudo", *seed_parts, image_id, j)
            jobs.append((image, grid, sc.masking_ratio, seed, recon, sc.metric, sc.phase))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_build_instance, jobs))
    return [_build_instance(job) for job in jobs]


def stage_gen_pseudo(cfg: PipelineConfig, paths: Paths, force: bool = False) -> None:
    if paths.pseudo_train.exists() and paths.pseudo_heldout.exists() and not force:
        return
    dataset = stage_gen_data(cfg, paths)
    if cfg.scorer.reconstructor == "mae":
        stage_pretrain_mae(cfg, paths)
    recon = _reconstructor(cfg, paths)
    train_ids, heldout_ids = dataset.split(cfg.dataset.heldout_fraction)
    for ids, parts, path in (
        (train_ids, ("train",), paths.pseudo_train),
        (heldout_ids, ("heldout",), paths.pseudo_heldout),
    ):
        instances = _gen_instances(cfg, dataset, ids, recon, parts, cfg.workers)
        with open(path, "w", encoding="utf-8") as fh:
            for inst in instances:
                fh.write(instance_record_line(inst, cfg.scorer.phase) + "\n")


def stage_train_ranker(cfg: PipelineConfig, paths: Paths, force: bool = False) -> RankerModel:
    if paths.ranker_ckpt.exists() and not force:
        return RankerModel.load(paths.ranker_ckpt)
    dataset = stage_gen_data(cfg, paths)
    stage_gen_pseudo(cfg, paths)
    if cfg.scorer.reconstructor == "mae":
        stage_pretrain_mae(cfg, paths)
    recon = _reconstructor(cfg, paths)
    grid = _grid(cfg)
    train_ids, _ = dataset.split(cfg.dataset.heldout_fraction)
    heldout = [
        instance_from_record(rec, dataset.image(rec["image_id"]), grid)
        for rec in read_instance_cache(paths.pseudo_heldout)
    ]
    encoder_init = (
        ReconstructionModel.load(paths.mae_ckpt) if cfg.ranker.init_from_encoder else None
    )

    if cfg.ranker.regenerate_per_epoch:

        def instances(epoch: int):
            return _gen_instances(cfg, dataset, train_ids, recon, ("epoch", epoch), cfg.workers)

    else:
        cached = [
            instance_from_record(rec, dataset.image(rec["image_id"]), grid)
            for rec in read_instance_cache(paths.pseudo_train)
        ]

        def instances(epoch: int):
            return cached

    model = train_ranker(
        instances,
        _ranker_config(cfg),
        cfg.ranker.loss,
        heldout=heldout,
        image_provider=dataset.image,
        encoder_init=encoder_init,
    )
    model.save(paths.ranker_ckpt)
    with open(paths.ranker_log, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "heldout_kendall_tau"])
        for row in model.metadata["log"]:
            writer.writerow([row["epoch"], repr(row["loss"]), repr(row["heldout_kendall_tau"])])
    untrained = init_ranker(
        _ranker_config(cfg), seed=derive_seed(cfg.seed, "ranker-untrained")
    )
    metrics = {
        "heldout_kendall_tau": model.metadata["log"][-1]["heldout_kendall_tau"],
        "untrained_kendall_tau": heldout_kendall_tau(untrained, heldout, dataset.image),
    }
    with open(paths.ranker_metrics, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
    model.metadata.update(metrics)
    return model


def _all_krs(cfg: PipelineConfig) -> list[float]:
    return sorted(set(cfg.selection.krs) | set(cfg.evaluation.probe.krs), reverse=True)


def _k_of(kr: float, n_total: int) -> int:
    return min(n_total, max(1, round_half_up(kr * n_total)))


def stage_select(cfg: PipelineConfig, paths: Paths, force: bool = False) -> dict:
    if paths.selections.exists() and not force:
        with open(paths.selections, "r", encoding="utf-8") as fh:
            return json.load(fh)
    dataset = stage_gen_data(cfg, paths)
    ranker = stage_train_ranker(cfg, paths)
    grid = _grid(cfg)
    ids = dataset.ids
    maps = []
    batch = 256
    for start in range(0, len(ids), batch):
        maps.append(ranker.score_images(dataset.images(ids[start : start + batch])))
    score_maps = np.concatenate(maps, axis=0)
    np.savez(paths.score_maps, ids=np.array(ids), scores=score_maps)

    selections: dict = {"ltrp": {}, "random": {}}
    krs = _all_krs(cfg)
    sel_seed = derive_seed(cfg.seed, "select")
    for kr in krs:
        key = repr(kr)
        sel_cfg = SelectionConfig(
            keep_ratio=kr,
            clustering_ratio=cfg.selection.clustering_ratio,
            knn_k=cfg.selection.knn_k,
        )
        ltrp_kr = {}
        for i, image_id in enumerate(ids):
            features = patchify(dataset.image(image_id), grid)
            result = select_patches(score_maps[i], features, sel_cfg)
            ltrp_kr[image_id] = [int(v) for v in result.indices]
        selections["ltrp"][key] = ltrp_kr
        k = _k_of(kr, grid.n_total)
        per_seed = {}
        for s in range(cfg.evaluation.probe.seeds):
            rand_kr = {}
            for image_id in ids:
                rng = np.random.default_rng(derive_seed(sel_seed, "random", s, kr, image_id))
                rand_kr[image_id] = [int(v) for v in np.sort(rng.permutation(grid.n_total)[:k])]
            per_seed[str(s)] = rand_kr
        selections["random"][key] = per_seed
    with open(paths.selections, "w", encoding="utf-8") as fh:
        json.dump(selections, fh, sort_keys=True)
    return selections


def _category_filter(cfg: PipelineConfig, categories) -> set[int] | None:
    mode = cfg.evaluation.category_filter
    if mode == "all":
        return None
    if mode == "learned":
        return {c.id for c in categories if c.learned}
    return {c.id for c in categories if not c.learned}


def _indices_to_mask(indices: list[int], grid: GridSpec) -> np.ndarray:
    from ..selector import SelectionResult

    return selection_mask(
        SelectionResult(indices=np.asarray(indices, dtype=np.int64)), grid
    )


def _probe_items(dataset, ids, selections, grid) -> list[ProbeItem]:
    items = []
    for image_id in ids:
        indices = np.sort(np.asarray(selections[image_id], dtype=np.int64))
        patches = patchify(dataset.image(image_id), grid)[indices].astype(np.float32)
        items.append(
            ProbeItem(patches=patches, positions=indices, label=dataset.labels[image_id])
        )
    return items


def stage_evaluate(cfg: PipelineConfig, paths: Paths, force: bool = False) -> dict:
    if paths.report_json.exists() and not force:
        with open(paths.report_json, "r", encoding="utf-8") as fh:
            return json.load(fh)
    dataset = stage_gen_data(cfg, paths)
    selections = stage_select(cfg, paths)
    grid = _grid(cfg)
    train_ids, heldout_ids = dataset.split(cfg.dataset.heldout_fraction)
    annotations = load_annotations(paths.dataset / "annotations.json")
    categories = load_categories(paths.dataset / "categories.json")
    cat_filter = _category_filter(cfg, categories)
    size = cfg.dataset.image_size
    fg_masks = {
        i: foreground_mask(annotations[i], size, size, cat_filter) for i in heldout_ids
    }

    with np.load(paths.score_maps, allow_pickle=False) as data:
        map_ids = [str(v) for v in data["ids"]]
        score_maps = data["scores"]
    score_of = dict(zip(map_ids, score_maps))
    fg_hits = 0
    fg_total = 0
    p = cfg.patch_size
    for image_id in heldout_ids:
        fg = fg_masks[image_id]
        patch_fg = fg.reshape(grid.rows, p, grid.cols, p).any(axis=(1, 3)).reshape(-1)
        if patch_fg.all() or not patch_fg.any():
            continue
        fg_total += 1
        smap = score_of[image_id]
        if smap[patch_fg].mean() > smap[~patch_fg].mean():
            fg_hits += 1
    fg_gt_bg = fg_hits / fg_total if fg_total else float("nan")

    with open(paths.mae_metrics, "r", encoding="utf-8") as fh:
        mae_metrics = json.load(fh)
    with open(paths.ranker_metrics, "r", encoding="utf-8") as fh:
        ranker_metrics = json.load(fh)

    n_classes = len(dataset.class_names)
    probe_spec = VitSpec(
        depth=cfg.evaluation.probe.depth,
        width=cfg.evaluation.probe.width,
        patch_dim=p * p * 3,
        head_out=n_classes,
        head_per_token=False,
    )

    rows = []
    probe_seed = derive_seed(cfg.seed, "probe")
    for kr in _all_krs(cfg):
        key = repr(kr)
        k = _k_of(kr, grid.n_total)
        flops = flops_estimate(probe_spec, k).total
        in_metric_krs = kr in cfg.selection.krs
        in_probe_krs = kr in cfg.evaluation.probe.krs
        for method in cfg.evaluation.methods:
            metric_vals = None
            if in_metric_krs:
                agg = np.zeros(4)
                count = 0
                seeds = (
                    [None]
                    if method == "ltrp"
                    else [str(s) for s in range(cfg.evaluation.probe.seeds)]
                )
                for s in seeds:
                    source = (
                        selections["ltrp"][key]
                        if s is None
                        else selections["random"][key][s]
                    )
                    for image_id in heldout_ids:
                        m = patch_metrics(
                            _indices_to_mask(source[image_id], grid), fg_masks[image_id]
                        )
                        agg += np.array([m.iou, m.f1, m.precision, m.recall])
                        count += 1
                metric_vals = agg / count
            probe_acc = None
            if in_probe_krs:
                accs = []
                for s in range(cfg.evaluation.probe.seeds):
                    source = (
                        selections["ltrp"][key]
                        if method == "ltrp"
                        else selections["random"][key][str(s)]
                    )
                    probe_cfg = ProbeConfig(
                        n_classes=n_classes,
                        depth=cfg.evaluation.probe.depth,
                        width=cfg.evaluation.probe.width,
                        heads=cfg.evaluation.probe.heads,
                        epochs=cfg.evaluation.probe.epochs,
                        batch_size=cfg.evaluation.probe.batch_size,
                        lr=cfg.evaluation.probe.lr,
                        seed=derive_seed(probe_seed, method, kr, s),
                    )
                    _, acc = train_probe(
                        _probe_items(dataset, train_ids, source, grid),
                        _probe_items(dataset, heldout_ids, source, grid),
                        grid,
                        probe_cfg,
                    )
                    accs.append(acc)
                probe_acc = float(np.mean(accs))
            rows.append(
                {
                    "kr": kr,
                    "method": method,
                    "iou": None if metric_vals is None else metric_vals[0],
                    "f1": None if metric_vals is None else metric_vals[1],
                    "precision": None if metric_vals is None else metric_vals[2],
                    "recall": None if metric_vals is None else metric_vals[3],
                    "probe_acc": probe_acc,
                    "flops": flops,
                }
            )

    report = {
        "header": {
            "generated_at": datetime.now(timezone.utc).isoformat(),
            "config_hash": config_hash(cfg),
            "flops_convention": FLOPS_CONVENTION,
            "versions": _versions(),
        },
        "config": config_to_dict(cfg),
        "mae": mae_metrics,
        "ranker": {**ranker_metrics, "fg_gt_bg_fraction": fg_gt_bg},
        "rows": rows,
    }
    with open(paths.report_json, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    with open(paths.report_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kr", "method", "iou", "f1", "precision", "recall", "probe_acc", "flops"])
        for row in rows:
            writer.writerow(
                [
                    repr(row["kr"]),
                    row["method"],
                    "" if row["iou"] is None else repr(row["iou"]),
                    "" if row["f1"] is None else repr(row["f1"]),
                    "" if row["precision"] is None else repr(row["precision"]),
                    "" if row["recall"] is None else repr(row["recall"]),
                    "" if row["probe_acc"] is None else repr(row["probe_acc"]),
                    row["flops"],
                ]
            )
    return report


def _versions() -> dict:
    import scipy
    import torch

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "ltrp": __version__,
    }


STAGES = (
    ("gen-data", stage_gen_data),
    ("pretrain-mae", stage_pretrain_mae),
    ("gen-pseudo", stage_gen_pseudo),
    ("train-ranker", stage_train_ranker),
    ("select", stage_select),
    ("evaluate", stage_evaluate),
)


def run_pipeline(cfg: PipelineConfig, force: bool = False, echo: bool = False) -> dict:
    """Run every stage in order; returns the final report dict."""
    paths = Paths(Path(cfg.out_dir))
    paths.out.mkdir(parents=True, exist_ok=True)
    timings = {}
    result = None
    for name, fn in STAGES:
        start = time.monotonic()
        try:
            result = fn(cfg, paths, force=force)
        except Exception as exc:  # noqa: BLE001 - stage boundary
            raise StageFailure(name, exc) from exc
        timings[name] = time.monotonic() - start
        if echo:
            print(f"[{name}] done in {timings[name]:.1f}s")
    with open(paths.timings, "w", encoding="utf-8") as fh:
        json.dump(timings, fh, sort_keys=True, indent=2)
    return result
