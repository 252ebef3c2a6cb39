"""FLOPs accounting for transformer models and the leave-one-out workload.

Counting convention (printed in report headers): one multiply-accumulate is
one operation; layer-norm, softmax, and activation costs are excluded (they
are sub-percent). Per transformer block on n tokens of width d the count is
``12 n d^2`` for the linear layers (QKV, attention projection, MLP at hidden
ratio 4) plus ``2 n^2 d`` for the two attention matmuls. The breakdown
splits exactly along those lines, so halving n quarters the attention term
and halves the linear-layer term.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["VitSpec", "FlopsEstimate", "flops_estimate", "scoring_flops"]


@dataclass(frozen=True)
class VitSpec:
    """Geometry of a plain ViT-style stack for op counting."""

    depth: int
    width: int
    mlp_ratio: float = 4.0
    patch_dim: int = 768  # input features per token (patch_size**2 * channels)
    head_out: int = 0  # output features of the final head
    head_per_token: bool = False  # pooled head (False) vs per-token head (True)

    def __post_init__(self) -> None:
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be positive")


@dataclass(frozen=True)
class FlopsEstimate:
    attention: int
    mlp: int
    embed_head: int

    @property
    def total(self) -> int:
        return self.attention + self.mlp + self.embed_head


def flops_estimate(spec: VitSpec, n_tokens: int) -> FlopsEstimate:
    if n_tokens < 1:
        raise ValueError("n_tokens must be positive")
    d = spec.width
    linear_per_block = int((4 + 2 * spec.mlp_ratio) * n_tokens * d * d)
    attn_per_block = 2 * n_tokens * n_tokens * d
    embed = n_tokens * spec.patch_dim * d
    head_tokens = n_tokens if spec.head_per_token else 1
    head = head_tokens * d * spec.head_out
    return FlopsEstimate(
        attention=spec.depth * attn_per_block,
        mlp=spec.depth * linear_per_block,
        embed_head=embed + head,
    )


def scoring_flops(
    encoder: VitSpec,
    decoder: VitSpec,
    n_visible: int,
    n_total: int,
    phase: str,
) -> int:
    """Total FLOPs to score one instance: anchor plus all n leave-one-out
    reconstructions.

    before_encoder re-runs the encoder on n-1 tokens for every removal;
    before_decoder reuses the anchor's encoder outputs (and their projection
    into the decoder width) and only re-runs the decoder under an attention
    mask. The decoder always processes the full grid.
    """
    if n_visible < 1:
        raise ValueError("n_visible must be positive")
    proj = n_visible * encoder.width * decoder.width

    def enc(n: int) -> int:
        return flops_estimate(encoder, n).total if n >= 1 else 0

    dec_pass = flops_estimate(decoder, n_total).total
    if phase == "before_encoder":
        proj_reduced = (n_visible - 1) * encoder.width * decoder.width
        return (
            enc(n_visible) + proj + dec_pass
            + n_visible * (enc(n_visible - 1) + proj_reduced + dec_pass)
        )
    if phase == "before_decoder":
        return enc(n_visible) + proj + (n_visible + 1) * dec_pass
    raise ValueError(f"unknown phase {phase!r}")
