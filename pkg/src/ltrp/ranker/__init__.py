"""Ranking losses with analytic gradients, the patch-scoring model, and its
training loop."""

from .losses import LossKind, descending_permutation, loss_gradient, ranking_loss
from .model import RankerConfig, RankerModel, init_ranker
from .train import heldout_kendall_tau, train_ranker

__all__ = [
    "LossKind",
    "descending_permutation",
    "loss_gradient",
    "ranking_loss",
    "RankerConfig",
    "RankerModel",
    "init_ranker",
    "heldout_kendall_tau",
    "train_ranker",
]
