"""Patch selection: top-k by score plus density-peak cluster representatives.

DPC-KNN conventions (all ties must stay exactly as pinned here; the test
suite checks them against an independent brute-force implementation):

* density  rho_i = exp(-(1/knn_k) * sum of squared distances to the knn_k
  nearest other points);
* j counts as "higher density" than i when rho_j > rho_i, or rho_j == rho_i
  and j < i;
* delta_i = distance to the nearest higher-density point (ties by lower
  index); the single point with no higher-density neighbor takes
  delta = max distance to any point;
* centers = top-k by gamma = rho * delta, ties by lower index;
* non-centers follow their nearest-higher-density-neighbor chain to a
  center; a chain head that is not itself a center (possible only under
  exact gamma ties) is assigned to the nearest center, ties by lower index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import round_half_up

__all__ = ["ClusterResult", "SelectionConfig", "SelectionResult", "dpc_knn", "select_patches"]


@dataclass
class ClusterResult:
    centers: np.ndarray  # point indices, ascending
    assignment: np.ndarray  # point index of each point's center
    rho: np.ndarray
    delta: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        return self.rho * self.delta


@dataclass(frozen=True)
class SelectionConfig:
    keep_ratio: float
    clustering_ratio: float = 0.0
    knn_k: int = 5

    def __post_init__(self) -> None:
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValueError(f"keep_ratio must be in (0, 1], got {self.keep_ratio}")
        if not 0.0 <= self.clustering_ratio <= 1.0:
            raise ValueError(f"clustering_ratio must be in [0, 1], got {self.clustering_ratio}")
        if self.knn_k < 1:
            raise ValueError(f"knn_k must be >= 1, got {self.knn_k}")


@dataclass
class SelectionResult:
    indices: np.ndarray  # distinct patch indices, selection order
    provenance: list[str] = field(default_factory=list)  # "ranked" | "cluster" per index

    @property
    def k(self) -> int:
        return len(self.indices)


def dpc_knn(points, k: int, knn_k: int) -> ClusterResult:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array (N, dim)")
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if not 1 <= knn_k < n:
        raise ValueError(f"knn_k must be in [1, {n - 1}], got {knn_k}")

    diff = pts[:, None, :] - pts[None, :, :]
    d2 = (diff**2).sum(axis=-1)
    dist = np.sqrt(d2)

    d2_other = d2.copy()
    np.fill_diagonal(d2_other, np.inf)
    knn_sum = np.sort(d2_other, axis=1)[:, :knn_k].sum(axis=1)
    rho = np.exp(-(knn_sum / knn_k))

    order = np.lexsort((np.arange(n), -rho))  # density rank: desc rho, ties asc index
    delta = np.empty(n)
    parent = np.full(n, -1)
    head = order[0]
    delta[head] = dist[head].max()
    for r in range(1, n):
        i = order[r]
        higher = order[:r]
        row = dist[i, higher]
        m = row.min()
        delta[i] = m
        parent[i] = higher[row == m].min()

    gamma = rho * delta
    top = np.lexsort((np.arange(n), -gamma))[:k]
    centers = np.sort(top)
    is_center = np.zeros(n, dtype=bool)
    is_center[centers] = True

    assignment = np.full(n, -1)
    for i in order:
        if is_center[i]:
            assignment[i] = i
        elif parent[i] >= 0:
            assignment[i] = assignment[parent[i]]
        else:
            row = dist[i, centers]
            assignment[i] = centers[row == row.min()].min()
    return ClusterResult(centers=centers, assignment=assignment, rho=rho, delta=delta)


def _cluster_picks(
    features: np.ndarray, clusters: ClusterResult, taken: set[int], h: int
) -> list[int]:
    """Representatives of the h largest groups, skipping exhausted groups."""
    sizes = {int(c): int(np.sum(clusters.assignment == c)) for c in clusters.centers}
    group_order = sorted(sizes, key=lambda c: (-sizes[c], c))
    picks: list[int] = []
    for center in group_order:
        if len(picks) == h:
            break
        members = np.nonzero(clusters.assignment == center)[0]
        candidates = [int(m) for m in members if int(m) not in taken]
        if not candidates:
            continue
        cand = np.asarray(candidates)
        d2 = ((features[cand] - features[center]) ** 2).sum(axis=-1)
        pick = int(cand[d2 == d2.min()].min())
        picks.append(pick)
        taken.add(pick)
    return picks


def select_patches(score_map, patch_features, config: SelectionConfig) -> SelectionResult:
    """Retain k = round(kr * n_total) patches: (k - h) top-scored plus h
    cluster representatives, h = round(clustering_ratio * k).

    Cluster groups are visited largest-first (ties by center index); a group
    whose members were all selected already falls through to the next one;
    with every group exhausted, remaining slots come from the ranked list.
    """
    scores = np.asarray(score_map, dtype=np.float64)
    features = np.asarray(patch_features, dtype=np.float64)
    n = scores.shape[0]
    if scores.ndim != 1 or features.ndim != 2 or features.shape[0] != n:
        raise ValueError("score_map and patch_features must agree on n_total")
    k = max(1, round_half_up(config.keep_ratio * n))
    k = min(k, n)
    h = min(k, round_half_up(config.clustering_ratio * k))

    ranked_order = np.lexsort((np.arange(n), -scores))
    indices = [int(i) for i in ranked_order[: k - h]]
    provenance = ["ranked"] * len(indices)
    taken = set(indices)

    if h > 0:
        knn_k = min(config.knn_k, n - 1)
        clusters = dpc_knn(features, k, knn_k)
        for pick in _cluster_picks(features, clusters, taken, h):
            indices.append(pick)
            provenance.append("cluster")

    for i in ranked_order:  # fallback fill when cluster groups ran out
        if len(indices) == k:
            break
        i = int(i)
        if i not in taken:
            indices.append(i)
            provenance.append("ranked")
            taken.add(i)

    return SelectionResult(indices=np.asarray(indices, dtype=np.int64), provenance=provenance)
