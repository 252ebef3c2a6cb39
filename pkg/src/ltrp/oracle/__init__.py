"""Image reconstruction from a visible patch subset: a trainable masked
autoencoder and a deterministic synthetic stand-in used as a test oracle."""

from .mae import MAEConfig, ReconstructionModel, init_model, masked_loss, pretrain_mae
from .synthetic import SyntheticReconstructor, synthetic_reconstruct

__all__ = [
    "MAEConfig",
    "ReconstructionModel",
    "init_model",
    "masked_loss",
    "pretrain_mae",
    "SyntheticReconstructor",
    "synthetic_reconstruct",
]
