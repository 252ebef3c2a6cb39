import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltrp.grid import GridSpec, MaskPlan, make_image
from ltrp.oracle import SyntheticReconstructor
from ltrp.scorer import (
    DistanceMetric,
    build_training_instance,
    image_distance,
    instance_from_record,
    instance_record_line,
    read_instance_cache,
    semantic_density_scores,
    write_instance_cache,
)

GRID = GridSpec(patch_size=2, rows=4, cols=4)


def _img(pixels):
    return make_image(np.asarray(pixels, dtype=np.float64))


def _plan(visible, n_total=16, ratio=0.8):
    visible = tuple(sorted(visible))
    masked = tuple(i for i in range(n_total) if i not in set(visible))
    return MaskPlan(visible=visible, masked=masked, masking_ratio=ratio, seed=0)


class TestImageDistance:
    def test_identical_all_metrics_zero(self):
        rng = np.random.default_rng(0)
        a = _img(rng.uniform(0, 1, (8, 8, 3)))
        for metric in DistanceMetric:
            assert image_distance(a, a, metric) == 0.0

    def test_l1_zeros_vs_ones(self):
        a = _img(np.zeros((8, 8, 1)))
        b = _img(np.ones((8, 8, 1)))
        assert image_distance(a, b, DistanceMetric.L1) == 1.0

    def test_psnr_zeros_vs_ones(self):
        a = _img(np.zeros((8, 8, 1)))
        b = _img(np.ones((8, 8, 1)))
        # MSE 1 -> PSNR 0 dB -> dissimilarity = cap = 100
        assert image_distance(a, b, DistanceMetric.PSNR) == pytest.approx(100.0)

    def test_l1_worked_example(self):
        a = _img(np.zeros((2, 2, 1)))
        b = _img(np.array([[0.5, 0.0], [0.0, 0.0]]).reshape(2, 2, 1))
        assert image_distance(a, b, DistanceMetric.L1) == pytest.approx(0.125)

    def test_dimension_mismatch(self):
        a = _img(np.zeros((4, 4, 1)))
        b = _img(np.zeros((8, 8, 1)))
        with pytest.raises(ValueError):
            image_distance(a, b, DistanceMetric.L1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([DistanceMetric.L1, DistanceMetric.SSIM]))
    def test_symmetry_l1_ssim(self, seed, metric):
        rng = np.random.default_rng(seed)
        a = _img(rng.uniform(0, 1, (8, 8, 1)))
        b = _img(rng.uniform(0, 1, (8, 8, 1)))
        assert image_distance(a, b, metric) == pytest.approx(image_distance(b, a, metric))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_non_negative_all_metrics(self, seed):
        rng = np.random.default_rng(seed)
        a = _img(rng.uniform(0, 1, (8, 8, 3)))
        b = _img(rng.uniform(0, 1, (8, 8, 3)))
        for metric in DistanceMetric:
            assert image_distance(a, b, metric) >= 0.0

    def test_ssim_windows_cover_full_image(self):
        # difference confined to the final rows must still register
        a = np.full((12, 12, 1), 0.5)
        b = a.copy()
        b[-2:, :, 0] = 1.0
        assert image_distance(_img(a), _img(b), DistanceMetric.SSIM) > 0.0


class TestSemanticDensityScores:
    def test_unique_patch_dominates_background(self):
        pixels = np.full((8, 8, 1), 0.2)
        pixels[0:2, 0:2, 0] = 0.9
        image = _img(pixels)
        plan = _plan([0, 12, 13, 14, 15])  # unique corner + far full row
        recon = SyntheticReconstructor(GRID)
        sv = semantic_density_scores(recon, image, plan, DistanceMetric.L1)
        assert sv.scores[0] > max(sv.scores[1:])

    def test_constant_image_all_zero(self):
        image = _img(np.full((8, 8, 1), 0.4))
        plan = _plan([5, 6, 9])
        recon = SyntheticReconstructor(GRID)
        sv = semantic_density_scores(recon, image, plan, DistanceMetric.L1)
        assert not sv.scores.any()

    def test_batched_equals_sequential(self):
        rng = np.random.default_rng(1)
        image = _img(rng.uniform(0, 1, (8, 8, 1)))
        plan = _plan([1, 4, 7, 10])
        recon = SyntheticReconstructor(GRID)
        a = semantic_density_scores(recon, image, plan, DistanceMetric.L1, batched=True)
        b = semantic_density_scores(recon, image, plan, DistanceMetric.L1, batched=False)
        np.testing.assert_allclose(a.scores, b.scores, atol=1e-5)

    def test_requires_two_visible(self):
        image = _img(np.zeros((8, 8, 1)))
        recon = SyntheticReconstructor(GRID)
        with pytest.raises(ValueError):
            semantic_density_scores(recon, image, _plan([3]), DistanceMetric.L1)

    def test_scores_nonnegative_finite(self):
        rng = np.random.default_rng(2)
        image = _img(rng.uniform(0, 1, (8, 8, 1)))
        recon = SyntheticReconstructor(GRID)
        for metric in DistanceMetric:
            sv = semantic_density_scores(recon, image, _plan([0, 3, 12, 15]), metric)
            assert np.all(np.isfinite(sv.scores))
            assert np.all(sv.scores >= 0)


class TestInstances:
    def _build(self, seed=5):
        rng = np.random.default_rng(0)
        image = make_image(rng.uniform(0, 1, (8, 8, 1)), id="img-a")
        recon = SyntheticReconstructor(GRID)
        return image, build_training_instance(
            image, GRID, 0.75, seed, recon, DistanceMetric.L1
        )

    def test_deterministic(self):
        _, a = self._build()
        _, b = self._build()
        assert a.plan == b.plan
        np.testing.assert_array_equal(a.scores.scores, b.scores.scores)
        np.testing.assert_array_equal(a.patches, b.patches)

    def test_masking_ratio_count(self):
        grid196 = GridSpec(patch_size=1, rows=14, cols=14)
        rng = np.random.default_rng(0)
        image = make_image(rng.uniform(0, 1, (14, 14, 1)))
        recon = SyntheticReconstructor(grid196)
        inst = build_training_instance(image, grid196, 0.9, 0, recon, DistanceMetric.L1)
        assert len(inst.scores.scores) == 20

    def test_cache_roundtrip_exact(self, tmp_path):
        image, inst = self._build()
        path = tmp_path / "cache.jsonl"
        write_instance_cache(path, [inst], phase="before_encoder")
        records = read_instance_cache(path)
        assert len(records) == 1
        rebuilt = instance_from_record(records[0], image, GRID)
        assert rebuilt.plan == inst.plan
        assert rebuilt.image_id == inst.image_id
        np.testing.assert_array_equal(rebuilt.scores.scores, inst.scores.scores)
        np.testing.assert_array_equal(rebuilt.patches, inst.patches)
        # the serialized line is a stable fixpoint
        assert instance_record_line(rebuilt, "before_encoder") == path.read_text().strip()

    def test_cache_line_has_nine_significant_digits(self):
        _, inst = self._build()
        line = instance_record_line(inst, "before_decoder")
        record = json.loads(line)
        assert set(record) == {
            "image_id", "seed", "masking_ratio", "visible", "scores", "metric", "phase",
        }
        for text in line.split('"scores": [')[1].split("]")[0].split(","):
            mantissa = text.strip().lstrip("-").replace(".", "").split("e")[0].lstrip("0")
            assert len(mantissa) <= 9
