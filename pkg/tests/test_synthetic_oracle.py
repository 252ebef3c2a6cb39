import numpy as np
import pytest

from ltrp.grid import GridSpec, MaskPlan, make_image, patchify, sample_mask
from ltrp.oracle import SyntheticReconstructor, synthetic_reconstruct


def _plan(visible, n_total, ratio=0.5):
    visible = tuple(sorted(visible))
    masked = tuple(i for i in range(n_total) if i not in set(visible))
    return MaskPlan(visible=visible, masked=masked, masking_ratio=ratio, seed=0)


def _random_image(rng, side=8, channels=1):
    return make_image(rng.uniform(0, 1, (side, side, channels)))


def test_all_visible_identity():
    rng = np.random.default_rng(0)
    grid = GridSpec(patch_size=2, rows=4, cols=4)
    image = _random_image(rng)
    out = synthetic_reconstruct(image, grid, _plan(range(16), 16))
    assert np.array_equal(out.pixels, image.pixels)


def test_single_visible_copies_everywhere():
    rng = np.random.default_rng(1)
    grid = GridSpec(patch_size=2, rows=4, cols=4)
    image = _random_image(rng)
    out = synthetic_reconstruct(image, grid, _plan([5], 16))
    patches = patchify(out, grid)
    src = patchify(image, grid)[5]
    for i in range(16):
        np.testing.assert_array_equal(patches[i], src)


def test_zero_visible_gray_fallback():
    grid = GridSpec(patch_size=2, rows=4, cols=4)
    image = _random_image(np.random.default_rng(2))
    out = synthetic_reconstruct(image, grid, _plan([], 16))
    assert np.all(out.pixels == 0.5)


def test_nearest_visible_table_corners():
    """4x4 grid with visible {0, 15}: brute-force nearest table decides each
    masked cell; diagonal ties go to index 0."""
    rng = np.random.default_rng(3)
    grid = GridSpec(patch_size=2, rows=4, cols=4)
    image = _random_image(rng)
    plan = _plan([0, 15], 16)
    out = patchify(synthetic_reconstruct(image, grid, plan), grid)
    src = patchify(image, grid)

    def nearest(idx):
        r, c = divmod(idx, 4)
        d0 = r * r + c * c
        d15 = (3 - r) ** 2 + (3 - c) ** 2
        return 0 if d0 <= d15 else 15  # tie -> lower index

    for i in range(16):
        expect = src[i] if i in (0, 15) else src[nearest(i)]
        np.testing.assert_array_equal(out[i], expect)
    # the anti-diagonal is the tie line
    for i in (3, 6, 9, 12):
        np.testing.assert_array_equal(out[i], src[0])


def test_plan_grid_mismatch():
    grid = GridSpec(patch_size=2, rows=4, cols=4)
    image = _random_image(np.random.default_rng(4))
    with pytest.raises(ValueError):
        synthetic_reconstruct(image, grid, _plan([0], 8))


def test_reconstructor_adapter_leave_one_out():
    rng = np.random.default_rng(5)
    grid = GridSpec(patch_size=2, rows=4, cols=4)
    recon = SyntheticReconstructor(grid)
    image = _random_image(rng)
    plan = sample_mask(grid, 0.75, 9)
    outs = recon.leave_one_out_all(image, plan)
    assert len(outs) == plan.n_visible
    for i, out in enumerate(outs):
        again = recon.leave_one_out(image, plan, i, phase="before_decoder")
        assert np.array_equal(out.pixels, again.pixels)  # phase-agnostic


def test_unique_patch_changes_more_than_duplicate():
    """Removing the only patch that covers distinct content changes the
    reconstruction more (in L1) than removing a duplicate of another
    visible patch."""
    grid = GridSpec(patch_size=2, rows=4, cols=4)
    pixels = np.full((8, 8, 1), 0.2)
    pixels[0:2, 0:2, 0] = 0.9  # patch 0 is unique
    image = make_image(pixels)
    plan = _plan([0, 5, 6], 16)  # 5 and 6 are background duplicates
    recon = SyntheticReconstructor(grid)
    anchor = recon.reconstruct(image, plan)

    def l1(a, b):
        return np.abs(a.pixels - b.pixels).mean()

    d_unique = l1(anchor, recon.leave_one_out(image, plan, 0))
    d_dup = l1(anchor, recon.leave_one_out(image, plan, 1))
    assert d_unique > d_dup


def test_constant_image_removals_change_nothing():
    grid = GridSpec(patch_size=2, rows=4, cols=4)
    image = make_image(np.full((8, 8, 1), 0.3))
    plan = _plan([0, 5, 6], 16)
    recon = SyntheticReconstructor(grid)
    anchor = recon.reconstruct(image, plan)
    for i in range(plan.n_visible):
        out = recon.leave_one_out(image, plan, i)
        assert np.array_equal(out.pixels, anchor.pixels)
