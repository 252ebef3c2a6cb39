import json

import numpy as np
import pytest

from ltrp.evaluator.annotations import (
    load_annotations,
    load_categories,
    rle_decode,
    rle_encode,
)


class TestRle:
    def test_roundtrip_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            mask = rng.random((rng.integers(2, 12), rng.integers(2, 12))) < 0.4
            np.testing.assert_array_equal(rle_decode(rle_encode(mask)), mask)

    def test_column_major_starts_with_zero_run(self):
        mask = np.zeros((2, 2), dtype=bool)
        mask[0, 1] = True  # column-major flat order: (0,0),(1,0),(0,1),(1,1)
        assert rle_encode(mask) == {"size": [2, 2], "counts": [2, 1, 1]}

    def test_all_true(self):
        mask = np.ones((3, 2), dtype=bool)
        assert rle_encode(mask)["counts"] == [0, 6]

    def test_decode_length_mismatch(self):
        with pytest.raises(ValueError):
            rle_decode({"size": [2, 2], "counts": [1, 1]})


class TestLoading:
    def _write(self, tmp_path, with_mask_file=False):
        mask = np.zeros((8, 8), dtype=bool)
        mask[0:2, 0:3] = True
        seg = {"mask_file": "m.png"} if with_mask_file else rle_encode(mask)
        doc = {
            "images": [{"id": "im_0", "file_name": "im_0.png", "width": 8, "height": 8}],
            "annotations": [
                {"id": 1, "image_id": "im_0", "category_id": 0,
                 "bbox": [0, 0, 3, 2], "segmentation": seg},
                {"id": 2, "image_id": "im_0", "category_id": 1, "bbox": [4, 4, 2, 2]},
            ],
            "categories": [{"id": 0, "name": "disc"}, {"id": 1, "name": "ring"}],
        }
        path = tmp_path / "annotations.json"
        path.write_text(json.dumps(doc))
        if with_mask_file:
            from PIL import Image as PILImage

            PILImage.fromarray((mask * 255).astype(np.uint8)).save(tmp_path / "m.png")
        cats = [{"id": 0, "name": "disc", "learned": True},
                {"id": 1, "name": "ring", "learned": False}]
        (tmp_path / "categories.json").write_text(json.dumps(cats))
        return path, mask

    def test_parse_boxes_and_rle(self, tmp_path):
        path, mask = self._write(tmp_path)
        per_image = load_annotations(path)
        ann = per_image["im_0"]
        assert (ann.width, ann.height) == (8, 8)
        assert len(ann.boxes) == 2
        assert len(ann.masks) == 1
        cat, decoded = ann.masks[0]
        assert cat == 0
        np.testing.assert_array_equal(decoded, mask)

    def test_parse_mask_file(self, tmp_path):
        path, mask = self._write(tmp_path, with_mask_file=True)
        ann = load_annotations(path)["im_0"]
        np.testing.assert_array_equal(ann.masks[0][1], mask)

    def test_categories_learned_flags(self, tmp_path):
        self._write(tmp_path)
        cats = load_categories(tmp_path / "categories.json")
        assert [c.learned for c in cats] == [True, False]
        assert [c.name for c in cats] == ["disc", "ring"]
