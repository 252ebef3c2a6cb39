"""Ranking losses over (predicted scores s, pseudo scores y) with analytic gradients.

Four kinds:

* ``listmle`` -- negative log-likelihood of the descending permutation of y
  under the Plackett-Luce model induced by s, computed in log-space.
* ``listnet`` -- top-1 cross-entropy between softmax(y) and softmax(s).
* ``ranknet`` -- mean logistic loss over ordered pairs (i, j) with y_i > y_j.
* ``regression`` -- MSE between s and min-max-normalized y (all-0.5 targets
  when the y range is degenerate).

The descending permutation breaks score ties by ascending position, which
makes every loss a deterministic function of (s, y).
"""

from __future__ import annotations

from enum import Enum

import numpy as np

__all__ = ["LossKind", "descending_permutation", "ranking_loss", "loss_gradient"]


class LossKind(str, Enum):
    LISTMLE = "listmle"
    LISTNET = "listnet"
    RANKNET = "ranknet"
    REGRESSION = "regression"


def _validate(s, y) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if s.ndim != 1 or y.ndim != 1:
        raise ValueError("scores must be 1-D arrays")
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: s has {s.shape[0]}, y has {y.shape[0]}")
    if s.shape[0] < 1:
        raise ValueError("scores must be non-empty")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y))):
        raise ValueError("scores contain non-finite values")
    return s, y


def descending_permutation(y) -> np.ndarray:
    """Positions ordered by descending y, ties broken by ascending position."""
    y = np.asarray(y, dtype=np.float64)
    return np.lexsort((np.arange(y.shape[0]), -y))


def _suffix_logsumexp(t: np.ndarray) -> np.ndarray:
    """lse[j] = log sum_{k >= j} exp(t[k]), computed stably from the tail."""
    lse = np.empty_like(t)
    lse[-1] = t[-1]
    for j in range(t.shape[0] - 2, -1, -1):
        lse[j] = np.logaddexp(t[j], lse[j + 1])
    return lse


def _minmax_targets(y: np.ndarray) -> np.ndarray:
    lo, hi = y.min(), y.max()
    if hi > lo:
        return (y - lo) / (hi - lo)
    return np.full_like(y, 0.5)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def _ranknet_pairs(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gt = y[:, None] > y[None, :]
    return np.nonzero(gt)


def ranking_loss(kind: LossKind, s, y) -> float:
    """Loss value for one instance; non-negative and finite for finite inputs."""
    s, y = _validate(s, y)
    kind = LossKind(kind)
    n = s.shape[0]
    if kind is LossKind.LISTMLE:
        t = s[descending_permutation(y)]
        return float(np.sum(_suffix_logsumexp(t) - t))
    if kind is LossKind.LISTNET:
        p = _softmax(y)
        log_q = s - s.max()
        log_q = log_q - np.log(np.exp(log_q).sum())
        return float(-np.sum(p * log_q))
    if kind is LossKind.RANKNET:
        ii, jj = _ranknet_pairs(y)
        if ii.size == 0:
            return 0.0
        return float(np.mean(np.logaddexp(0.0, -(s[ii] - s[jj]))))
    if kind is LossKind.REGRESSION:
        return float(np.mean((s - _minmax_targets(y)) ** 2))
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_gradient(kind: LossKind, s, y) -> np.ndarray:
    """Analytic dL/ds, same validation as ranking_loss."""
    s, y = _validate(s, y)
    kind = LossKind(kind)
    n = s.shape[0]
    if kind is LossKind.LISTMLE:
        pi = descending_permutation(y)
        t = s[pi]
        lse = _suffix_logsumexp(t)
        # position j accumulates its softmax weight within every suffix that
        # contains it, minus 1 from its own -t[j] term
        g_sorted = np.zeros(n)
        for i in range(n):
            g_sorted[i:] += np.exp(t[i:] - lse[i])
        g_sorted -= 1.0
        grad = np.empty(n)
        grad[pi] = g_sorted
        return grad
    if kind is LossKind.LISTNET:
        return _softmax(s) - _softmax(y)
    if kind is LossKind.RANKNET:
        grad = np.zeros(n)
        ii, jj = _ranknet_pairs(y)
        if ii.size == 0:
            return grad
        sig = 1.0 / (1.0 + np.exp(s[ii] - s[jj]))  # sigmoid(-(s_i - s_j))
        np.add.at(grad, ii, -sig / ii.size)
        np.add.at(grad, jj, sig / ii.size)
        return grad
    if kind is LossKind.REGRESSION:
        return 2.0 * (s - _minmax_targets(y)) / n
    raise ValueError(f"unknown loss kind {kind!r}")
