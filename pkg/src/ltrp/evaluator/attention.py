"""Mean attention distance per layer and head, in pixels.

For each (layer, head): sum over query-key pairs of attention weight times
Euclidean distance between the two patch centers, averaged over queries and
over images. Models must expose recorded attention maps through an
``attention_maps(images)`` method; anything else raises TypeError.
"""

from __future__ import annotations

import numpy as np

from ..grid import GridSpec

__all__ = ["mean_attention_distance", "attention_distance"]


def mean_attention_distance(weights: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Distance summary of explicit weights shaped (layers, heads, n, n)."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 4 or weights.shape[-1] != weights.shape[-2]:
        raise ValueError(f"expected (layers, heads, n, n) weights, got {weights.shape}")
    n = weights.shape[-1]
    if n != grid.n_total:
        raise ValueError(f"weights cover {n} tokens, grid has {grid.n_total}")
    centers = grid.patch_centers()
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    return (weights * dist).sum(axis=-1).mean(axis=-1)


def attention_distance(model, images, grid: GridSpec) -> np.ndarray:
    """Per-(layer, head) mean attention distance over a batch of images."""
    maps = getattr(model, "attention_maps", None)
    if maps is None:
        raise TypeError(f"{type(model).__name__} does not expose attention weights")
    per_image = [mean_attention_distance(w, grid) for w in maps(images)]
    return np.mean(per_image, axis=0)
