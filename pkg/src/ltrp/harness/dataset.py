"""Synthetic shape dataset: images, COCO-style annotations, labels.

Every image carries 1-3 shapes (disc, rectangle, triangle, ring) on a flat,
gradient, or noise background; the generator emits the image file, a
per-shape bounding box and binary mask (uncompressed RLE), and a class label
(the first shape's class). Everything is deterministic from the seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..grid import Image, make_image
from ..evaluator.annotations import rle_encode
from .config import DatasetConfig, derive_seed

__all__ = ["SyntheticDataset", "gen_synthetic_dataset", "load_dataset"]

_MIN_CONTRAST = 0.25


@dataclass
class SyntheticDataset:
    root: Path
    ids: list[str]
    labels: dict[str, int]
    class_names: list[str]
    image_format: str

    def image(self, image_id: str) -> Image:
        path = self.root / "images" / f"{image_id}.{self.image_format}"
        if self.image_format == "ppm":
            pixels = _read_ppm(path)
        else:
            from PIL import Image as PILImage

            pixels = np.asarray(PILImage.open(path).convert("RGB"))
        return make_image(pixels.astype(np.float32) / 255.0, id=image_id)

    def images(self, ids: list[str] | None = None) -> list[Image]:
        return [self.image(i) for i in (ids if ids is not None else self.ids)]

    def split(self, heldout_fraction: float) -> tuple[list[str], list[str]]:
        n_heldout = max(1, int(round(heldout_fraction * len(self.ids))))
        return self.ids[:-n_heldout], self.ids[-n_heldout:]


def _shape_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "disc" or kind == "ring":
        r = rng.integers(size // 6, size // 3 + 1)
        cy = rng.integers(r, size - r + 1)
        cx = rng.integers(r, size - r + 1)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        if kind == "disc":
            return d2 <= r * r
        r_in = max(1, int(r * 0.55))
        return (d2 <= r * r) & (d2 > r_in * r_in)
    if kind == "rectangle":
        w = rng.integers(size // 5, size // 2 + 1)
        h = rng.integers(size // 5, size // 2 + 1)
        y0 = rng.integers(0, size - h + 1)
        x0 = rng.integers(0, size - w + 1)
        mask = np.zeros((size, size), dtype=bool)
        mask[y0 : y0 + h, x0 : x0 + w] = True
        return mask
    if kind == "triangle":
        while True:
            pts = rng.integers(0, size, size=(3, 2)).astype(np.float64)
            area = 0.5 * abs(
                (pts[1, 0] - pts[0, 0]) * (pts[2, 1] - pts[0, 1])
                - (pts[2, 0] - pts[0, 0]) * (pts[1, 1] - pts[0, 1])
            )
            if area >= (size * size) / 16:
                break
        mask = np.ones((size, size), dtype=bool)
        for a in range(3):
            b = (a + 1) % 3
            c = (a + 2) % 3
            ex, ey = pts[b] - pts[a]
            side = (xx - pts[a, 0]) * ey - (yy - pts[a, 1]) * ex
            ref = (pts[c, 0] - pts[a, 0]) * ey - (pts[c, 1] - pts[a, 1]) * ex
            mask &= (side * np.sign(ref)) >= 0
        return mask
    raise ValueError(f"unknown shape kind {kind!r}")


def _background(mode: str, size: int, rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.15, 0.85, size=3)
    if mode == "flat":
        return np.broadcast_to(base, (size, size, 3)).copy()
    if mode == "gradient":
        other = np.clip(base + rng.uniform(-0.3, 0.3, size=3), 0.0, 1.0)
        t = np.linspace(0.0, 1.0, size)
        if rng.integers(2):
            ramp = t[:, None, None]
        else:
            ramp = t[None, :, None]
        return base * (1 - ramp) + other * ramp
    if mode == "noise":
        noise = rng.normal(0.0, 0.06, size=(size, size, 3))
        return np.clip(base + noise, 0.0, 1.0)
    raise ValueError(f"unknown background mode {mode!r}")


def _shape_color(bg_mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    while True:
        color = rng.uniform(0.0, 1.0, size=3)
        if np.abs(color - bg_mean).mean() >= _MIN_CONTRAST:
            return color


def _write_ppm(path: Path, pixels_u8: np.ndarray) -> None:
    h, w, _ = pixels_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels_u8.tobytes())


def _read_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)


def gen_synthetic_dataset(spec: DatasetConfig, out_dir, seed: int) -> SyntheticDataset:
    """Write the dataset to out_dir (images/, annotations.json,
    categories.json, labels.csv, meta.json)."""
    spec.validate()
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    size = spec.image_size
    class_names = list(spec.shapes)
    images_meta, annotations, labels = [], [], {}
    ann_id = 0
    ids = []
    for i in range(spec.count):
        image_id = f"im_{i:05d}"
        ids.append(image_id)
        rng = np.random.default_rng(derive_seed(seed, "image", i))
        pixels = _background(spec.background, size, rng)
        lo, hi = spec.shapes_per_image
        n_shapes = int(rng.integers(lo, hi + 1))
        label = None
        for s in range(n_shapes):
            kind = class_names[int(rng.integers(len(class_names)))]
            if label is None:
                label = class_names.index(kind)
            mask = _shape_mask(kind, size, rng)
            color = _shape_color(pixels.mean(axis=(0, 1)), rng)
            pixels[mask] = color
            ys, xs = np.nonzero(mask)
            ann_id += 1
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": class_names.index(kind),
                    "bbox": [
                        int(xs.min()),
                        int(ys.min()),
                        int(xs.max() - xs.min() + 1),
                        int(ys.max() - ys.min() + 1),
                    ],
                    "area": int(mask.sum()),
                    "segmentation": rle_encode(mask),
                }
            )
        labels[image_id] = label
        pixels_u8 = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
        path = root / "images" / f"{image_id}.{spec.image_format}"
        if spec.image_format == "ppm":
            _write_ppm(path, pixels_u8)
        else:
            from PIL import Image as PILImage

            PILImage.fromarray(pixels_u8).save(path)
        images_meta.append({"id": image_id, "file_name": path.name, "width": size, "height": size})
    categories = [
        {"id": idx, "name": name, "learned": name in spec.learned_shapes}
        for idx, name in enumerate(class_names)
    ]
    with open(root / "annotations.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"images": images_meta, "annotations": annotations, "categories": categories},
            fh,
            sort_keys=True,
        )
    with open(root / "categories.json", "w", encoding="utf-8") as fh:
        json.dump(categories, fh, sort_keys=True)
    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "class_id"])
        for image_id in ids:
            writer.writerow([image_id, labels[image_id]])
    with open(root / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"seed": seed, "class_names": class_names, "image_format": spec.image_format},
            fh,
            sort_keys=True,
        )
    return SyntheticDataset(
        root=root,
        ids=ids,
        labels=labels,
        class_names=class_names,
        image_format=spec.image_format,
    )


def load_dataset(root) -> SyntheticDataset:
    root = Path(root)
    with open(root / "meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    labels = {}
    ids = []
    with open(root / "labels.csv", "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["image_id"])
            labels[row["image_id"]] = int(row["class_id"])
    return SyntheticDataset(
        root=root,
        ids=ids,
        labels=labels,
        class_names=meta["class_names"],
        image_format=meta["image_format"],
    )
