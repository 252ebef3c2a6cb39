"""Patch-grid arithmetic: partitioning, masking, and single-patch removal.

All operations here are pure and deterministic. The indexing conventions are
shared by every other module and must not drift:

* grid cells are numbered row-major, ``index = row * cols + col``;
* a patch is flattened row-major within the cell, channels innermost, so a
  flat patch vector has ``patch_size**2 * channels`` entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Image",
    "GridSpec",
    "MaskPlan",
    "make_image",
    "patchify",
    "unpatchify",
    "sample_mask",
    "remove_patch",
    "round_half_up",
    "visible_count",
]


@dataclass(frozen=True, eq=False)
class Image:
    """A float image with pixels shaped (height, width, channels) in [0, 1]."""

    pixels: np.ndarray
    id: str = ""

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class GridSpec:
    """Partition geometry: rows x cols patches of patch_size pixels per side."""

    patch_size: int
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must have positive dims, got {self.rows}x{self.cols}")
        if self.rows * self.cols < 2:
            raise ValueError("grid must contain at least 2 patches")

    @property
    def n_total(self) -> int:
        return self.rows * self.cols

    @classmethod
    def for_image(cls, height: int, width: int, patch_size: int) -> "GridSpec":
        if height % patch_size or width % patch_size:
            raise ValueError(
                f"image dims {height}x{width} not divisible by patch_size {patch_size}"
            )
        return cls(patch_size=patch_size, rows=height // patch_size, cols=width // patch_size)

    def patch_centers(self) -> np.ndarray:
        """(n_total, 2) pixel coordinates (y, x) of each patch center."""
        rows = np.arange(self.rows).repeat(self.cols)
        cols = np.tile(np.arange(self.cols), self.rows)
        return np.stack(
            [(rows + 0.5) * self.patch_size, (cols + 0.5) * self.patch_size], axis=1
        )


@dataclass(frozen=True)
class MaskPlan:
    """A visible/masked partition of the grid indices.

    ``visible`` and ``masked`` are strictly increasing and disjoint; together
    they cover 0..n_total-1. ``sample_mask`` guarantees at least one visible
    patch; ``remove_patch`` may produce an empty visible set (the
    reconstruction fallback for that case lives in the oracle module).
    """

    visible: tuple[int, ...]
    masked: tuple[int, ...]
    masking_ratio: float
    seed: int

    @property
    def n_visible(self) -> int:
        return len(self.visible)

    @property
    def n_total(self) -> int:
        return len(self.visible) + len(self.masked)


def make_image(pixels: np.ndarray, id: str = "") -> Image:
    """Validate and wrap a pixel array as an Image."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3:
        raise ValueError(f"pixels must be 3-D (H, W, C), got shape {pixels.shape}")
    if not np.issubdtype(pixels.dtype, np.floating):
        raise ValueError(f"pixels must be floating point, got {pixels.dtype}")
    if not np.all(np.isfinite(pixels)):
        raise ValueError("pixels contain non-finite values")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise ValueError("pixels must lie in [0, 1]")
    return Image(pixels=pixels, id=id)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def visible_count(grid: GridSpec, masking_ratio: float) -> int:
    """Number of visible patches at a masking ratio: max(1, round-half-up)."""
    if not 0.0 < masking_ratio < 1.0:
        raise ValueError(f"masking_ratio must be in (0, 1), got {masking_ratio}")
    return max(1, round_half_up((1.0 - masking_ratio) * grid.n_total))


def _check_image_grid(image: Image, grid: GridSpec) -> None:
    if image.height != grid.rows * grid.patch_size or image.width != grid.cols * grid.patch_size:
        raise ValueError(
            f"image {image.height}x{image.width} does not match grid "
            f"{grid.rows}x{grid.cols} @ patch_size {grid.patch_size}"
        )


def patchify(image: Image, grid: GridSpec) -> np.ndarray:
    """Split an image into flat patch vectors, shape (n_total, patch_size**2 * C).

    Patch i holds grid cell (i // cols, i % cols); pixels are flattened
    row-major within the cell with channels innermost.
    """
    _check_image_grid(image, grid)
    p = grid.patch_size
    c = image.channels
    x = image.pixels.reshape(grid.rows, p, grid.cols, p, c)
    x = x.transpose(0, 2, 1, 3, 4)
    return x.reshape(grid.n_total, p * p * c)


def unpatchify(patches: np.ndarray, grid: GridSpec, id: str = "") -> Image:
    """Exact inverse of patchify."""
    patches = np.asarray(patches)
    if patches.ndim != 2 or patches.shape[0] != grid.n_total:
        raise ValueError(
            f"expected {grid.n_total} patches, got array of shape {patches.shape}"
        )
    p = grid.patch_size
    if patches.shape[1] % (p * p):
        raise ValueError(
            f"patch length {patches.shape[1]} is not a multiple of patch_size**2 = {p * p}"
        )
    c = patches.shape[1] // (p * p)
    x = patches.reshape(grid.rows, grid.cols, p, p, c)
    x = x.transpose(0, 2, 1, 3, 4)
    pixels = x.reshape(grid.rows * p, grid.cols * p, c)
    return Image(pixels=pixels, id=id)


def sample_mask(grid: GridSpec, masking_ratio: float, seed: int) -> MaskPlan:
    """Sample a visible/masked partition uniformly without replacement."""
    n_vis = visible_count(grid, masking_ratio)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(grid.n_total)
    visible = tuple(sorted(int(i) for i in perm[:n_vis]))
    masked = tuple(sorted(int(i) for i in perm[n_vis:]))
    return MaskPlan(visible=visible, masked=masked, masking_ratio=masking_ratio, seed=seed)


def remove_patch(plan: MaskPlan, i: int) -> MaskPlan:
    """New plan with the i-th visible patch moved to the masked set.

    Pure: the input plan is unchanged. May return an empty visible set when
    called on a single-visible plan.
    """
    if not 0 <= i < len(plan.visible):
        raise ValueError(f"visible position {i} out of range for {len(plan.visible)} patches")
    idx = plan.visible[i]
    visible = plan.visible[:i] + plan.visible[i + 1 :]
    masked = tuple(sorted(plan.masked + (idx,)))
    return MaskPlan(
        visible=visible, masked=masked, masking_ratio=plan.masking_ratio, seed=plan.seed
    )
