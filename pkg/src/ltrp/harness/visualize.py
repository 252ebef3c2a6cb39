"""Score-map and selection rendering.

heat mode paints each patch with its min-max-normalized score as grayscale
(a degenerate score range renders uniform mid-gray); keep mode shows
retained patches at full brightness with a green outline and dims dropped
patches. PPM (binary P6) output is always available; PNG via Pillow.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..grid import GridSpec, Image
from ..selector import SelectionResult

__all__ = ["render_score_map", "write_image_u8"]

_DIM_FACTOR = 0.3
_OUTLINE = np.array([0, 255, 0], dtype=np.uint8)


def _to_u8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


def write_image_u8(path, pixels_u8: np.ndarray) -> None:
    path = Path(path)
    if path.suffix == ".ppm":
        h, w, _ = pixels_u8.shape
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(pixels_u8.tobytes())
        return
    from PIL import Image as PILImage

    PILImage.fromarray(pixels_u8).save(path)


def _heat(scores: np.ndarray, grid: GridSpec) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    norm = (scores - lo) / (hi - lo) if hi > lo else np.full_like(scores, 0.5)
    cells = norm.reshape(grid.rows, grid.cols)
    up = np.repeat(np.repeat(cells, grid.patch_size, 0), grid.patch_size, 1)
    return _to_u8(np.repeat(up[..., None], 3, axis=2))


def _keep(image: Image, indices: np.ndarray, grid: GridSpec) -> np.ndarray:
    rgb = image.pixels if image.channels == 3 else np.repeat(image.pixels, 3, axis=2)
    out = _to_u8(rgb * _DIM_FACTOR)
    full = _to_u8(rgb)
    p = grid.patch_size
    for idx in indices:
        r, c = divmod(int(idx), grid.cols)
        ys, xs = slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p)
        out[ys, xs] = full[ys, xs]
        out[r * p, xs] = _OUTLINE
        out[(r + 1) * p - 1, xs] = _OUTLINE
        out[ys, c * p] = _OUTLINE
        out[ys, (c + 1) * p - 1] = _OUTLINE
    return out


def render_score_map(
    image: Image,
    scores_or_result,
    grid: GridSpec,
    mode: str,
    path,
) -> None:
    """Render to PNG or PPM (by file suffix); bytes are deterministic for a
    fixed input."""
    if mode == "heat":
        scores = np.asarray(scores_or_result, dtype=np.float64)
        if scores.shape != (grid.n_total,):
            raise ValueError(f"expected {grid.n_total} scores, got {scores.shape}")
        write_image_u8(path, _heat(scores, grid))
        return
    if mode == "keep":
        if isinstance(scores_or_result, SelectionResult):
            indices = scores_or_result.indices
        else:
            indices = np.asarray(scores_or_result, dtype=np.int64)
        write_image_u8(path, _keep(image, indices, grid))
        return
    raise ValueError(f"unknown render mode {mode!r}")
