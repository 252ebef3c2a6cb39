import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltrp.selector import ClusterResult, SelectionConfig, dpc_knn, select_patches

from oracles import dpc_bruteforce


class TestDpcKnn:
    def test_two_separated_blobs(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0.0, 0.1, (10, 2))
        b = rng.normal(8.0, 0.1, (10, 2))
        pts = np.vstack([a, b])
        result = dpc_knn(pts, 2, 3)
        groups = {tuple(sorted(np.nonzero(result.assignment == c)[0])) for c in result.centers}
        assert groups == {tuple(range(10)), tuple(range(10, 20))}
        for c in result.centers:
            assert result.assignment[c] == c

    def test_k_equals_n(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(7, 3))
        result = dpc_knn(pts, 7, 2)
        np.testing.assert_array_equal(result.centers, np.arange(7))
        np.testing.assert_array_equal(result.assignment, np.arange(7))

    def test_one_dimensional_worked_example(self):
        pts = np.array([[0.0], [0.1], [0.2], [5.0], [5.1], [5.2]])
        result = dpc_knn(pts, 2, 2)
        np.testing.assert_array_equal(result.centers, [1, 4])
        np.testing.assert_array_equal(result.assignment, [1, 1, 1, 4, 4, 4])
        # blob medians have the highest density
        assert result.rho[1] == result.rho.max()
        # hand-computed densities: exp(-mean of the two squared distances)
        assert result.rho[0] == pytest.approx(np.exp(-0.025))
        assert result.rho[1] == pytest.approx(np.exp(-0.01))

    def test_all_identical_points(self):
        pts = np.zeros((5, 2))
        result = dpc_knn(pts, 2, 2)
        np.testing.assert_array_equal(result.centers, [0, 1])
        assert set(result.assignment) <= {0, 1}

    def test_validation(self):
        pts = np.zeros((4, 2))
        with pytest.raises(ValueError):
            dpc_knn(pts, 0, 2)
        with pytest.raises(ValueError):
            dpc_knn(pts, 5, 2)
        with pytest.raises(ValueError):
            dpc_knn(pts, 2, 4)  # knn_k must be < N

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_bruteforce_exactly(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 30))
        dim = int(rng.integers(1, 6))
        pts = rng.normal(size=(n, dim))
        if seed % 3 == 0:
            pts = np.round(pts, 1)  # provoke distance and density ties
        k = int(rng.integers(1, n + 1))
        knn_k = int(rng.integers(1, n))
        result = dpc_knn(pts, k, knn_k)
        rho, delta, gamma, centers, assignment = dpc_bruteforce(pts, k, knn_k)
        np.testing.assert_array_equal(result.rho, rho)
        np.testing.assert_array_equal(result.delta, delta)
        np.testing.assert_array_equal(result.gamma, gamma)
        np.testing.assert_array_equal(result.centers, centers)
        np.testing.assert_array_equal(result.assignment, assignment)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutation_consistency(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 20))
        pts = rng.normal(size=(n, 3))
        # strictly distinct coordinates keep every tie rule permutation-safe
        k = int(rng.integers(1, n // 2 + 1))
        knn_k = int(rng.integers(1, n))
        perm = rng.permutation(n)
        base = dpc_knn(pts, k, knn_k)
        permuted = dpc_knn(pts[perm], k, knn_k)
        inverse = np.argsort(perm)
        np.testing.assert_allclose(permuted.rho, base.rho[perm], rtol=1e-12)
        np.testing.assert_array_equal(
            np.sort(perm[permuted.centers]), base.centers
        )
        np.testing.assert_array_equal(perm[permuted.assignment], base.assignment[perm])


def _uniform_features(n, dim=4, seed=0):
    return np.random.default_rng(seed).normal(size=(n, dim))


class TestSelectPatches:
    def test_h_zero_is_pure_top_k(self):
        scores = np.array([0.1, 0.9, 0.5, 0.7, 0.3, 0.2, 0.8, 0.4])
        features = _uniform_features(8)
        result = select_patches(scores, features, SelectionConfig(keep_ratio=0.5))
        np.testing.assert_array_equal(result.indices, [1, 6, 3, 2])
        assert result.provenance == ["ranked"] * 4

    def test_clustering_ratio_one_all_from_clusters(self):
        rng = np.random.default_rng(2)
        features = rng.normal(size=(16, 4))
        scores = rng.normal(size=16)
        cfg = SelectionConfig(keep_ratio=0.25, clustering_ratio=1.0, knn_k=3)
        result = select_patches(scores, features, cfg)
        assert result.k == 4
        assert result.provenance == ["cluster"] * 4
        assert len(set(result.indices.tolist())) == 4

    def test_constructed_boundary_plus_homogeneous_case(self):
        """Scores concentrate on 3 boundary patches; one large homogeneous
        feature region supplies the cluster representative."""
        n = 16
        features = np.zeros((n, 4))
        features[12:] = np.random.default_rng(3).normal(5.0, 0.01, (4, 4))
        # patches 0..11 are identical (the big homogeneous group)
        scores = np.zeros(n)
        scores[[13, 14, 15]] = [3.0, 2.0, 1.0]
        cfg = SelectionConfig(keep_ratio=0.25, clustering_ratio=0.25, knn_k=3)
        result = select_patches(scores, features, cfg)
        assert result.k == 4
        np.testing.assert_array_equal(result.indices[:3], [13, 14, 15])
        assert result.provenance[:3] == ["ranked"] * 3
        # the representative comes from the homogeneous region, by the rules
        # of the brute-force clustering of the same inputs
        rho, delta, gamma, centers, assignment = dpc_bruteforce(features, 4, 3)
        sizes = {c: int(np.sum(assignment == c)) for c in centers}
        largest = sorted(sizes, key=lambda c: (-sizes[c], c))[0]
        assert result.indices[3] in np.nonzero(assignment == largest)[0]
        assert result.indices[3] < 12
        assert result.provenance[3] == "cluster"

    def test_exhausted_groups_fall_back_to_ranked(self):
        # k = n and clustering_ratio 1: every group gets consumed, the
        # remaining slots come from the ranked list
        rng = np.random.default_rng(4)
        features = np.zeros((6, 2))  # one big homogeneous blob -> few groups
        scores = rng.normal(size=6)
        cfg = SelectionConfig(keep_ratio=1.0, clustering_ratio=1.0, knn_k=2)
        result = select_patches(scores, features, cfg)
        assert result.k == 6
        assert sorted(result.indices.tolist()) == list(range(6))

    def test_invariants_random_maps(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = 16
            scores = rng.normal(size=n)
            features = rng.normal(size=(n, 4))
            cr = float(rng.choice([0.0, 0.2, 0.5, 1.0]))
            kr = float(rng.choice([0.25, 0.5, 0.75, 1.0]))
            result = select_patches(
                scores, features, SelectionConfig(keep_ratio=kr, clustering_ratio=cr, knn_k=3)
            )
            k = max(1, int(np.floor(kr * n + 0.5)))
            assert result.k == k
            assert len(set(result.indices.tolist())) == k
            assert len(result.provenance) == k

    def test_nested_at_h_zero(self):
        rng = np.random.default_rng(6)
        scores = rng.normal(size=16)
        features = rng.normal(size=(16, 4))
        selected = {}
        for kr in (0.25, 0.5, 0.75):
            res = select_patches(scores, features, SelectionConfig(keep_ratio=kr))
            selected[kr] = set(res.indices.tolist())
        assert selected[0.25] <= selected[0.5] <= selected[0.75]

    def test_score_scaling_invariance(self):
        rng = np.random.default_rng(7)
        scores = rng.normal(size=16)
        features = rng.normal(size=(16, 4))
        cfg = SelectionConfig(keep_ratio=0.5, clustering_ratio=0.2, knn_k=3)
        base = select_patches(scores, features, cfg)
        for c in (0.1, 3.0, 1000.0):
            scaled = select_patches(c * scores, features, cfg)
            np.testing.assert_array_equal(scaled.indices, base.indices)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SelectionConfig(keep_ratio=0.0)
        with pytest.raises(ValueError):
            SelectionConfig(keep_ratio=1.2)
        with pytest.raises(ValueError):
            SelectionConfig(keep_ratio=0.5, clustering_ratio=1.5)
