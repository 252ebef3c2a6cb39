"""Deterministic nearest-visible reconstructor used as a test oracle.

Each masked patch is filled with the pixels of its nearest visible patch in
grid Euclidean distance (ties broken by lower patch index); visible patches
pass through unchanged. With zero visible patches the output is the 0.5-gray
image. Removal phase is irrelevant here: leave-one-out reconstruction is by
definition reconstruction from the reduced plan.
"""

from __future__ import annotations

import numpy as np

from ..grid import GridSpec, Image, MaskPlan, patchify, remove_patch, unpatchify

__all__ = ["synthetic_reconstruct", "SyntheticReconstructor"]


def _grid_coords(grid: GridSpec) -> np.ndarray:
    rows = np.arange(grid.n_total) // grid.cols
    cols = np.arange(grid.n_total) % grid.cols
    return np.stack([rows, cols], axis=1).astype(np.float64)


def synthetic_reconstruct(image: Image, grid: GridSpec, plan: MaskPlan) -> Image:
    """Fill masked patches from their nearest visible patch."""
    if plan.n_total != grid.n_total:
        raise ValueError(f"plan covers {plan.n_total} patches, grid has {grid.n_total}")
    patches = patchify(image, grid)
    if plan.n_visible == 0:
        gray = np.full_like(patches, 0.5)
        return unpatchify(gray, grid, id=image.id)
    out = patches.copy()
    if plan.masked:
        coords = _grid_coords(grid)
        visible = np.asarray(plan.visible)
        masked = np.asarray(plan.masked)
        diff = coords[masked][:, None, :] - coords[visible][None, :, :]
        d2 = (diff**2).sum(axis=-1)
        # visible indices are ascending, so argmin resolves distance ties
        # toward the lower patch index
        nearest = visible[np.argmin(d2, axis=1)]
        out[masked] = patches[nearest]
    return unpatchify(out, grid, id=image.id)


class SyntheticReconstructor:
    """Adapter giving the synthetic reconstructor the reconstruction-model surface."""

    def __init__(self, grid: GridSpec):
        self.grid = grid

    def reconstruct(self, image: Image, plan: MaskPlan) -> Image:
        return synthetic_reconstruct(image, self.grid, plan)

    def leave_one_out(self, image: Image, plan: MaskPlan, i: int, phase: str = "before_encoder") -> Image:
        return self.reconstruct(image, remove_patch(plan, i))

    def leave_one_out_all(
        self, image: Image, plan: MaskPlan, phase: str = "before_encoder", batched: bool = True
    ) -> list[Image]:
        return [self.leave_one_out(image, plan, i, phase) for i in range(plan.n_visible)]
