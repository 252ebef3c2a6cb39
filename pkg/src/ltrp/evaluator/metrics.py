"""Pixel-rasterized consistency metrics between selections and foreground.

Metrics are computed on pixel masks, not patch counts: annotation boxes
rarely align to patch boundaries, and pixel rasterization is exact for any
grid. Empty-foreground convention: recall = 1 (precision and IoU keep their
ordinary values), so category-filtered sweeps stay total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..grid import GridSpec
from ..selector import SelectionResult
from .annotations import ImageAnnotation

__all__ = ["PatchMetrics", "foreground_mask", "selection_mask", "patch_metrics"]


@dataclass(frozen=True)
class PatchMetrics:
    iou: float
    f1: float
    precision: float
    recall: float


def foreground_mask(
    annotation: ImageAnnotation,
    height: int,
    width: int,
    categories: set[int] | None = None,
) -> np.ndarray:
    """Union of all boxes/masks whose category passes the filter (None = all).

    An annotation's segmentation mask takes precedence over its box only in
    the sense that both are unioned; boxes rasterize to half-open pixel
    ranges [x, x+w) x [y, y+h) clipped to the image.
    """
    out = np.zeros((height, width), dtype=bool)
    for box in annotation.boxes:
        if categories is not None and box.category_id not in categories:
            continue
        x0 = max(0, int(round(box.x)))
        y0 = max(0, int(round(box.y)))
        x1 = min(width, int(round(box.x + box.w)))
        y1 = min(height, int(round(box.y + box.h)))
        if x1 > x0 and y1 > y0:
            out[y0:y1, x0:x1] = True
    for cat, mask in annotation.masks:
        if categories is not None and cat not in categories:
            continue
        if mask.shape != (height, width):
            raise ValueError(f"mask shape {mask.shape} does not match {(height, width)}")
        out |= mask
    return out


def selection_mask(result: SelectionResult, grid: GridSpec) -> np.ndarray:
    """Binary pixel mask with the retained patches set to 1."""
    out = np.zeros((grid.rows * grid.patch_size, grid.cols * grid.patch_size), dtype=bool)
    p = grid.patch_size
    for idx in result.indices:
        r, c = divmod(int(idx), grid.cols)
        out[r * p : (r + 1) * p, c * p : (c + 1) * p] = True
    return out


def patch_metrics(sel: np.ndarray, fg: np.ndarray) -> PatchMetrics:
    sel = np.asarray(sel).astype(bool)
    fg = np.asarray(fg).astype(bool)
    if sel.shape != fg.shape:
        raise ValueError(f"mask shapes differ: {sel.shape} vs {fg.shape}")
    inter = int(np.sum(sel & fg))
    union = int(np.sum(sel | fg))
    n_sel = int(np.sum(sel))
    n_fg = int(np.sum(fg))
    precision = inter / n_sel if n_sel else 0.0
    recall = inter / n_fg if n_fg else 1.0
    iou = inter / union if union else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PatchMetrics(iou=iou, f1=f1, precision=precision, recall=recall)
