"""Per-patch pseudo scores: distance between the anchor reconstruction and
each leave-one-out reconstruction.

All three metrics are reported as dissimilarities (larger = more semantic
change): l1 is the mean absolute pixel difference; psnr is reported as
100 dB minus the (capped) PSNR; ssim as 1 - SSIM with 8x8 windows at
stride 4, C1 = 0.01**2, C2 = 0.03**2 on the [0, 1] range, channel-averaged.

Scores are held as float32, which makes the 9-significant-digit JSONL cache
an exact round-trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from .grid import GridSpec, Image, MaskPlan, patchify, sample_mask

__all__ = [
    "DistanceMetric",
    "ScoreVector",
    "RankingInstance",
    "image_distance",
    "semantic_density_scores",
    "build_training_instance",
    "write_instance_cache",
    "read_instance_cache",
    "instance_from_record",
]

PSNR_MAX_DB = 100.0


class DistanceMetric(str, Enum):
    L1 = "l1"
    PSNR = "psnr"
    SSIM = "ssim"


@dataclass
class ScoreVector:
    scores: np.ndarray  # float32, aligned with plan.visible
    metric: DistanceMetric


@dataclass
class RankingInstance:
    image_id: str
    plan: MaskPlan
    scores: ScoreVector
    patches: np.ndarray  # (n_visible, patch_size**2 * C) pixel payloads


def _check_same_shape(a: Image, b: Image) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")


def _ssim_window_starts(extent: int, window: int, stride: int = 4) -> list[int]:
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return starts


def _ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean windowed SSIM of one channel pair; window clamps to small images."""
    c1, c2 = 0.01**2, 0.03**2
    h, w = a.shape
    win = min(8, h, w)
    vals = []
    for y in _ssim_window_starts(h, win):
        for x in _ssim_window_starts(w, win):
            pa = a[y : y + win, x : x + win]
            pb = b[y : y + win, x : x + win]
            mu_a, mu_b = pa.mean(), pb.mean()
            var_a, var_b = pa.var(), pb.var()
            cov = ((pa - mu_a) * (pb - mu_b)).mean()
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(vals))


def image_distance(a: Image, b: Image, metric: DistanceMetric) -> float:
    """Non-negative dissimilarity between two same-shaped images."""
    _check_same_shape(a, b)
    metric = DistanceMetric(metric)
    pa = a.pixels.astype(np.float64)
    pb = b.pixels.astype(np.float64)
    if metric is DistanceMetric.L1:
        return float(np.abs(pa - pb).mean())
    if metric is DistanceMetric.PSNR:
        mse = float(((pa - pb) ** 2).mean())
        psnr = PSNR_MAX_DB if mse == 0.0 else -10.0 * np.log10(mse)
        return PSNR_MAX_DB - min(psnr, PSNR_MAX_DB)
    if metric is DistanceMetric.SSIM:
        per_channel = [_ssim(pa[..., c], pb[..., c]) for c in range(pa.shape[2])]
        return 1.0 - float(np.mean(per_channel))
    raise ValueError(f"unknown metric {metric!r}")


def semantic_density_scores(
    model,
    image: Image,
    plan: MaskPlan,
    metric: DistanceMetric,
    phase: str = "before_encoder",
    batched: bool = True,
) -> ScoreVector:
    """scores[i] = distance(anchor, reconstruction with visible patch i removed).

    The anchor is reconstructed once per plan; the n leave-one-out
    reconstructions may be evaluated batched or sequentially with identical
    results up to accumulation order.
    """
    if plan.n_visible < 2:
        raise ValueError("semantic density scores need at least 2 visible patches")
    anchor = model.reconstruct(image, plan)
    loo = model.leave_one_out_all(image, plan, phase=phase, batched=batched)
    scores = np.asarray(
        [image_distance(anchor, r, metric) for r in loo], dtype=np.float32
    )
    return ScoreVector(scores=scores, metric=DistanceMetric(metric))


def build_training_instance(
    image: Image,
    grid: GridSpec,
    masking_ratio: float,
    seed: int,
    model,
    metric: DistanceMetric,
    phase: str = "before_encoder",
) -> RankingInstance:
    """Compose sample_mask + semantic_density_scores into one training sample."""
    plan = sample_mask(grid, masking_ratio, seed)
    scores = semantic_density_scores(model, image, plan, metric, phase)
    patches = patchify(image, grid)[np.asarray(plan.visible)]
    return RankingInstance(image_id=image.id, plan=plan, scores=scores, patches=patches)


def _fmt9(x: float) -> str:
    return format(float(x), ".9g")


def instance_record_line(instance: RankingInstance, phase: str) -> str:
    """One JSONL cache line; floats carry 9 significant digits."""
    plan = instance.plan
    visible = json.dumps(list(plan.visible))
    scores = "[" + ", ".join(_fmt9(v) for v in instance.scores.scores) + "]"
    return (
        f'{{"image_id": {json.dumps(instance.image_id)}, "seed": {plan.seed}, '
        f'"masking_ratio": {_fmt9(plan.masking_ratio)}, "visible": {visible}, '
        f'"scores": {scores}, "metric": {json.dumps(instance.scores.metric.value)}, '
        f'"phase": {json.dumps(phase)}}}'
    )


def write_instance_cache(path, instances: Iterable[RankingInstance], phase: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(instance_record_line(inst, phase) + "\n")


def read_instance_cache(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def instance_from_record(record: dict, image: Image, grid: GridSpec) -> RankingInstance:
    """Rebuild a RankingInstance from a cache record plus its source image."""
    visible = tuple(int(i) for i in record["visible"])
    masked = tuple(i for i in range(grid.n_total) if i not in set(visible))
    plan = MaskPlan(
        visible=visible,
        masked=masked,
        masking_ratio=float(record["masking_ratio"]),
        seed=int(record["seed"]),
    )
    scores = ScoreVector(
        scores=np.asarray(record["scores"], dtype=np.float32),
        metric=DistanceMetric(record["metric"]),
    )
    patches = patchify(image, grid)[np.asarray(visible)]
    return RankingInstance(
        image_id=record["image_id"], plan=plan, scores=scores, patches=patches
    )
