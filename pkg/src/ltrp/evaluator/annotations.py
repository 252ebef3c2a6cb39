"""COCO-style annotation parsing: boxes, binary-mask RLE, category flags.

The accepted JSON subset:

* ``images``: [{id, file_name, width, height}]
* ``annotations``: [{id, image_id, category_id, bbox: [x, y, w, h]} plus an
  optional ``segmentation`` that is either an uncompressed COCO RLE
  ({"size": [h, w], "counts": [ints]}, column-major, starting with the
  zero run) or {"mask_file": relative path} pointing at a pre-rasterized
  binary PNG next to the JSON]
* categories file: [{id, name, learned: bool}]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Box",
    "Category",
    "ImageAnnotation",
    "rle_encode",
    "rle_decode",
    "load_categories",
    "load_annotations",
]


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float
    category_id: int


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    learned: bool = True


@dataclass
class ImageAnnotation:
    image_id: str
    width: int
    height: int
    boxes: list[Box] = field(default_factory=list)
    masks: list[tuple[int, np.ndarray]] = field(default_factory=list)  # (category_id, bool mask)


def rle_encode(mask: np.ndarray) -> dict:
    """Uncompressed COCO RLE: column-major run lengths starting with zeros."""
    mask = np.asarray(mask).astype(bool)
    flat = mask.T.reshape(-1)
    counts: list[int] = []
    value = False
    run = 0
    for v in flat:
        if v == value:
            run += 1
        else:
            counts.append(run)
            value = v
            run = 1
    counts.append(run)
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": counts}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in rle["counts"]:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    if pos != h * w:
        raise ValueError(f"RLE covers {pos} pixels, mask has {h * w}")
    return flat.reshape(w, h).T


def load_categories(path) -> list[Category]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return [Category(id=int(c["id"]), name=c["name"], learned=bool(c["learned"])) for c in raw]


def _load_mask_file(base: Path, rel: str) -> np.ndarray:
    from PIL import Image as PILImage

    arr = np.asarray(PILImage.open(base / rel).convert("L"))
    return arr > 127


def load_annotations(path) -> dict[str, ImageAnnotation]:
    """Parse a COCO-style JSON into per-image annotations keyed by image id."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    per_image: dict[str, ImageAnnotation] = {}
    id_map = {}
    for im in raw.get("images", []):
        key = str(im["id"])
        id_map[im["id"]] = key
        per_image[key] = ImageAnnotation(
            image_id=key, width=int(im["width"]), height=int(im["height"])
        )
    for ann in raw.get("annotations", []):
        key = id_map.get(ann["image_id"], str(ann["image_id"]))
        entry = per_image.setdefault(
            key, ImageAnnotation(image_id=key, width=0, height=0)
        )
        cat = int(ann["category_id"])
        if "bbox" in ann:
            x, y, w, h = ann["bbox"]
            entry.boxes.append(Box(x=float(x), y=float(y), w=float(w), h=float(h), category_id=cat))
        seg = ann.get("segmentation")
        if isinstance(seg, dict) and "counts" in seg:
            entry.masks.append((cat, rle_decode(seg)))
        elif isinstance(seg, dict) and "mask_file" in seg:
            entry.masks.append((cat, _load_mask_file(path.parent, seg["mask_file"])))
    return per_image
