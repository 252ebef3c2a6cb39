"""Self-supervised patch-importance ranking.

Pipeline: pre-train a small masked autoencoder, derive per-patch pseudo
scores from how much the reconstruction changes when each visible patch is
removed, train a ranking model on those scores with list-wise losses, and
select informative patches (top-ranked plus density-peak cluster
representatives) for downstream evaluation.
"""

__version__ = "0.1.0"
