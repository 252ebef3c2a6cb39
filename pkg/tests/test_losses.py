import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltrp.ranker import LossKind, descending_permutation, loss_gradient, ranking_loss

from oracles import central_difference_gradient, listmle_bruteforce

ALL_KINDS = list(LossKind)


def _rand(seed, n):
    rng = np.random.default_rng(seed)
    return rng.normal(size=n), rng.normal(size=n)


class TestPermutation:
    def test_descending_with_index_ties(self):
        y = np.array([1.0, 3.0, 3.0, 0.5])
        np.testing.assert_array_equal(descending_permutation(y), [1, 2, 0, 3])

    def test_bijection(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            y = rng.normal(size=7)
            pi = descending_permutation(y)
            assert sorted(pi) == list(range(7))
            assert np.all(np.diff(y[pi]) <= 0)


class TestWorkedExamples:
    def test_listmle_n1_zero(self):
        assert ranking_loss(LossKind.LISTMLE, [0.3], [1.0]) == pytest.approx(0.0)

    def test_listnet_n1_zero(self):
        assert ranking_loss(LossKind.LISTNET, [0.3], [1.0]) == pytest.approx(0.0)

    def test_ranknet_no_pairs_zero(self):
        assert ranking_loss(LossKind.RANKNET, [0.3], [1.0]) == 0.0
        # ties in y produce no ordered pairs
        assert ranking_loss(LossKind.RANKNET, [0.1, 0.9], [1.0, 1.0]) == 0.0

    def test_listmle_symmetric_scores(self):
        assert ranking_loss(LossKind.LISTMLE, [0.0, 0.0], [2.0, 1.0]) == pytest.approx(
            0.693147, abs=1e-6
        )

    def test_listmle_n3_matches_enumeration(self):
        s = np.array([1.0, 0.5, 0.0])
        y = np.array([3.0, 2.0, 1.0])
        expected, total = listmle_bruteforce(s, y)
        assert total == pytest.approx(1.0, abs=1e-12)
        assert ranking_loss(LossKind.LISTMLE, s, y) == pytest.approx(expected, abs=1e-12)

    def test_ranknet_equal_scores_single_pair(self):
        assert ranking_loss(LossKind.RANKNET, [0.5, 0.5], [2.0, 1.0]) == pytest.approx(
            0.693147, abs=1e-6
        )

    def test_regression_degenerate_targets(self):
        # constant y -> all-0.5 targets
        assert ranking_loss(LossKind.REGRESSION, [0.5, 0.5], [1.0, 1.0]) == 0.0


class TestValidation:
    def test_length_mismatch(self):
        for kind in ALL_KINDS:
            with pytest.raises(ValueError):
                ranking_loss(kind, [1.0, 2.0], [1.0])
            with pytest.raises(ValueError):
                loss_gradient(kind, [1.0, 2.0], [1.0])

    def test_non_finite(self):
        for kind in ALL_KINDS:
            with pytest.raises(ValueError):
                ranking_loss(kind, [np.nan, 0.0], [1.0, 2.0])
            with pytest.raises(ValueError):
                ranking_loss(kind, [1.0, 0.0], [np.inf, 2.0])

    def test_empty(self):
        for kind in ALL_KINDS:
            with pytest.raises(ValueError):
                ranking_loss(kind, [], [])


class TestBruteForceEquivalence:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_probabilities_sum_to_one_and_loss_matches(self, seed, n):
        s, y = _rand(seed, n)
        expected, total = listmle_bruteforce(s, y)
        assert total == pytest.approx(1.0, abs=1e-9)
        assert ranking_loss(LossKind.LISTMLE, s, y) == pytest.approx(expected, abs=1e-9)

    def test_log_space_survives_large_scores(self):
        s = np.array([800.0, -800.0, 0.0])
        y = np.array([3.0, 2.0, 1.0])
        value = ranking_loss(LossKind.LISTMLE, s, y)
        assert np.isfinite(value)
        grad = loss_gradient(LossKind.LISTMLE, s, y)
        assert np.all(np.isfinite(grad))


class TestGradients:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 8), st.sampled_from(ALL_KINDS))
    def test_matches_central_differences(self, seed, n, kind):
        s, y = _rand(seed, n)
        analytic = loss_gradient(kind, s, y)
        numeric = central_difference_gradient(lambda v: ranking_loss(kind, v, y), s)
        rel = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
        assert np.all(rel < 1e-4)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 8))
    def test_listmle_gradient_sums_to_zero(self, seed, n):
        s, y = _rand(seed, n)
        assert loss_gradient(LossKind.LISTMLE, s, y).sum() == pytest.approx(0.0, abs=1e-10)

    def test_listmle_shift_invariance(self):
        s, y = _rand(3, 5)
        base = ranking_loss(LossKind.LISTMLE, s, y)
        assert ranking_loss(LossKind.LISTMLE, s + 17.3, y) == pytest.approx(base, abs=1e-9)

    def test_regression_zero_at_normalized_targets(self):
        y = np.array([3.0, 1.0, 2.0])
        targets = (y - y.min()) / (y.max() - y.min())
        np.testing.assert_allclose(
            loss_gradient(LossKind.REGRESSION, targets, y), 0.0, atol=1e-12
        )


class TestOrderingProperties:
    def test_listmle_scale_monotonicity(self):
        y = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
        losses = [ranking_loss(LossKind.LISTMLE, c * y, y) for c in (0.1, 1.0, 10.0)]
        assert losses[2] < losses[1] < losses[0]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_listmle_minimized_by_consistent_sorting(self, seed, n):
        rng = np.random.default_rng(seed)
        values = np.sort(rng.normal(size=n))[::-1]  # fixed score multiset
        y = rng.normal(size=n)
        pi = descending_permutation(y)
        best = np.empty(n)
        best[pi] = values  # highest score on the top-ranked item, etc.
        best_loss = ranking_loss(LossKind.LISTMLE, best, y)
        for _ in range(10):
            shuffled = np.empty(n)
            shuffled[pi] = rng.permutation(values)
            assert best_loss <= ranking_loss(LossKind.LISTMLE, shuffled, y) + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_ranknet_strictly_positive_with_pairs(self, seed, n):
        s, y = _rand(seed, n)
        if np.unique(y).size < 2:
            return
        assert ranking_loss(LossKind.RANKNET, s, y) > 0.0
