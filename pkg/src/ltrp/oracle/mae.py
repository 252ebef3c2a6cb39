"""A small trainable masked autoencoder over patch tokens.

Architecture: linear patch embedding, fixed 2-D sinusoidal positional
embeddings, pre-norm transformer encoder over the visible tokens, a
narrower/shallower decoder over the full grid (mask tokens at masked
positions), and a linear per-patch pixel head. No class token, no dropout.

Reconstruction pastes the ORIGINAL pixels at visible positions and uses the
decoder prediction elsewhere (clipped to [0, 1]). With the per-patch-norm
target transform, predictions are de-normalized with the original patch's
statistics before composing; that leakage is deliberate, the two target
modes only need to be comparable.

Leave-one-out removal phases:

* ``before_encoder``: literally reconstruct from the reduced plan.
* ``before_decoder``: encode the full visible set once, then exclude the
  removed token from the decoder's attention entirely (as key for every
  query and as a query itself, keeping only its self-connection to avoid an
  empty softmax row). The excluded slot's own prediction fills its patch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from ..checkpoint import check_config, load_checkpoint, save_checkpoint
from ..grid import (
    GridSpec,
    Image,
    MaskPlan,
    patchify,
    remove_patch,
    unpatchify,
    visible_count,
)
from ..nn import Block, sincos_pos_embed_2d

__all__ = ["MAEConfig", "ReconstructionModel", "pretrain_mae", "masked_loss"]

NORM_EPS = 1e-6


@dataclass(frozen=True)
class MAEConfig:
    image_size: int = 32
    patch_size: int = 4
    channels: int = 3
    enc_depth: int = 4
    enc_width: int = 128
    enc_heads: int = 4
    dec_depth: int = 2
    dec_width: int = 64
    dec_heads: int = 4
    target_transform: str = "raw_pixels"  # or "per_patch_norm"
    masking_ratio: float = 0.75
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.target_transform not in ("raw_pixels", "per_patch_norm"):
            raise ValueError(f"unknown target_transform {self.target_transform!r}")
        if not 0.0 < self.masking_ratio < 1.0:
            raise ValueError("masking_ratio must be in (0, 1)")
        if self.dec_width > self.enc_width or self.dec_depth > self.enc_depth:
            raise ValueError("decoder must not exceed the encoder in width or depth")
        if self.dec_width == self.enc_width and self.dec_depth == self.enc_depth:
            raise ValueError("decoder must be lighter than the encoder")

    @property
    def grid(self) -> GridSpec:
        return GridSpec.for_image(self.image_size, self.image_size, self.patch_size)

    @property
    def token_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


class _MAENet(nn.Module):
    def __init__(self, cfg: MAEConfig):
        super().__init__()
        grid = cfg.grid
        self.patch_embed = nn.Linear(cfg.token_dim, cfg.enc_width)
        self.register_buffer(
            "enc_pos", sincos_pos_embed_2d(cfg.enc_width, grid.rows, grid.cols)
        )
        self.enc_blocks = nn.ModuleList(
            Block(cfg.enc_width, cfg.enc_heads) for _ in range(cfg.enc_depth)
        )
        self.enc_norm = nn.LayerNorm(cfg.enc_width)

        self.dec_embed = nn.Linear(cfg.enc_width, cfg.dec_width)
        self.mask_token = nn.Parameter(torch.zeros(cfg.dec_width))
        self.register_buffer(
            "dec_pos", sincos_pos_embed_2d(cfg.dec_width, grid.rows, grid.cols)
        )
        self.dec_blocks = nn.ModuleList(
            Block(cfg.dec_width, cfg.dec_heads) for _ in range(cfg.dec_depth)
        )
        self.dec_norm = nn.LayerNorm(cfg.dec_width)
        self.head = nn.Linear(cfg.dec_width, cfg.token_dim)
        nn.init.normal_(self.mask_token, std=0.02)

    def encode(self, tokens: torch.Tensor, vis_idx: torch.Tensor) -> torch.Tensor:
        """tokens (B, n_vis, token_dim) at grid positions vis_idx (B, n_vis)."""
        x = self.patch_embed(tokens) + self.enc_pos[vis_idx]
        for block in self.enc_blocks:
            x = block(x)
        return self.enc_norm(x)

    def decode(
        self,
        encoded: torch.Tensor,
        vis_idx: torch.Tensor,
        attn_mask: torch.Tensor | None = None,
        keep: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Full-grid predictions (B, n_total, token_dim).

        ``keep`` optionally restricts the decoder sequence to a subset of
        grid positions (physical token deletion); predictions are returned
        only for those positions in that case.
        """
        b = encoded.shape[0]
        n_total = self.dec_pos.shape[0]
        seq = self.mask_token.expand(b, n_total, -1).clone()
        seq.scatter_(
            1,
            vis_idx.unsqueeze(-1).expand(-1, -1, seq.shape[-1]),
            self.dec_embed(encoded),
        )
        seq = seq + self.dec_pos
        if keep is not None:
            seq = seq[:, keep, :]
        for block in self.dec_blocks:
            seq = block(seq, attn_mask=attn_mask)
        return self.head(self.dec_norm(seq))


def _transform_targets(tokens: torch.Tensor, mode: str) -> torch.Tensor:
    if mode == "raw_pixels":
        return tokens
    mean = tokens.mean(dim=-1, keepdim=True)
    std = tokens.std(dim=-1, unbiased=False, keepdim=True)
    return (tokens - mean) / (std + NORM_EPS)


class ReconstructionModel:
    """Frozen-weight reconstruction surface over the trained network."""

    def __init__(self, net: _MAENet, config: MAEConfig, metadata: dict | None = None):
        self.net = net
        self.config = config
        self.metadata = metadata or {}
        self.net.eval()

    @property
    def grid(self) -> GridSpec:
        return self.config.grid

    def _tokens(self, image: Image) -> np.ndarray:
        grid = self.grid
        if image.height != self.config.image_size or image.width != self.config.image_size:
            raise ValueError(
                f"image {image.height}x{image.width} does not match model size "
                f"{self.config.image_size}"
            )
        if image.channels != self.config.channels:
            raise ValueError(f"expected {self.config.channels} channels")
        return patchify(image, grid).astype(np.float32)

    def _compose(
        self, tokens: np.ndarray, pred: np.ndarray, fill: list[int], image_id: str
    ) -> Image:
        out = tokens.copy()
        if fill:
            idx = np.asarray(fill)
            filled = pred[idx]
            if self.config.target_transform == "per_patch_norm":
                mean = tokens[idx].mean(axis=-1, keepdims=True)
                std = tokens[idx].std(axis=-1, keepdims=True)
                filled = filled * (std + NORM_EPS) + mean
            out[idx] = np.clip(filled, 0.0, 1.0)
        return unpatchify(out, self.grid, id=image_id)

    def _predict(
        self, tokens: np.ndarray, visible: tuple[int, ...], attn_mask=None
    ) -> np.ndarray:
        vis = torch.as_tensor(visible, dtype=torch.long).unsqueeze(0)
        t = torch.from_numpy(tokens[np.asarray(visible)]).unsqueeze(0)
        with torch.no_grad():
            encoded = self.net.encode(t, vis)
            pred = self.net.decode(encoded, vis, attn_mask=attn_mask)
        return pred.squeeze(0).numpy()

    def reconstruct(self, image: Image, plan: MaskPlan) -> Image:
        if plan.n_total != self.grid.n_total:
            raise ValueError("plan does not match the model grid")
        tokens = self._tokens(image)
        if not plan.masked:
            return Image(pixels=image.pixels.copy(), id=image.id)
        if plan.n_visible == 0:
            gray = np.full_like(tokens, 0.5)
            return unpatchify(gray, self.grid, id=image.id)
        pred = self._predict(tokens, plan.visible)
        return self._compose(tokens, pred, list(plan.masked), image.id)

    def _decoder_exclusion_mask(self, slots: list[int]) -> torch.Tensor:
        """(len(slots), 1, n, n) additive masks, one excluded slot each."""
        n = self.grid.n_total
        mask = torch.zeros(len(slots), 1, n, n)
        for b, v in enumerate(slots):
            mask[b, 0, :, v] = float("-inf")
            mask[b, 0, v, :] = float("-inf")
            mask[b, 0, v, v] = 0.0
        return mask

    def leave_one_out(
        self, image: Image, plan: MaskPlan, i: int, phase: str = "before_encoder"
    ) -> Image:
        if not 0 <= i < plan.n_visible:
            raise ValueError(f"visible position {i} out of range")
        if phase == "before_encoder":
            return self.reconstruct(image, remove_patch(plan, i))
        if phase != "before_decoder":
            raise ValueError(f"unknown phase {phase!r}")
        tokens = self._tokens(image)
        removed = plan.visible[i]
        attn_mask = self._decoder_exclusion_mask([removed])
        pred = self._predict(tokens, plan.visible, attn_mask=attn_mask)
        fill = sorted(plan.masked + (removed,))
        return self._compose(tokens, pred, fill, image.id)

    def leave_one_out_all(
        self,
        image: Image,
        plan: MaskPlan,
        phase: str = "before_encoder",
        batched: bool = True,
    ) -> list[Image]:
        """All n leave-one-out reconstructions; batched evaluation equals the
        sequential one up to accumulation order."""
        n = plan.n_visible
        if not batched:
            return [self.leave_one_out(image, plan, i, phase) for i in range(n)]
        tokens = self._tokens(image)
        if phase == "before_encoder":
            if n < 2:
                return [self.leave_one_out(image, plan, i, phase) for i in range(n)]
            vis = np.asarray(plan.visible)
            reduced = np.stack([np.delete(vis, i) for i in range(n)])
            vis_t = torch.as_tensor(reduced, dtype=torch.long)
            t = torch.from_numpy(tokens[reduced])
            with torch.no_grad():
                pred = self.net.decode(self.net.encode(t, vis_t), vis_t)
            pred = pred.numpy()
            return [
                self._compose(
                    tokens, pred[i], sorted(plan.masked + (plan.visible[i],)), image.id
                )
                for i in range(n)
            ]
        if phase != "before_decoder":
            raise ValueError(f"unknown phase {phase!r}")
        vis = torch.as_tensor(plan.visible, dtype=torch.long).unsqueeze(0)
        t = torch.from_numpy(tokens[np.asarray(plan.visible)]).unsqueeze(0)
        attn_mask = self._decoder_exclusion_mask(list(plan.visible))
        with torch.no_grad():
            encoded = self.net.encode(t, vis)
            pred = self.net.decode(
                encoded.expand(n, -1, -1), vis.expand(n, -1), attn_mask=attn_mask
            )
        pred = pred.numpy()
        return [
            self._compose(
                tokens, pred[i], sorted(plan.masked + (plan.visible[i],)), image.id
            )
            for i in range(n)
        ]

    def _loo_decoder_predictions(
        self, image: Image, plan: MaskPlan, i: int, delete: bool
    ) -> tuple[np.ndarray, np.ndarray]:
        """Raw decoder predictions for one before_decoder removal, either via
        attention masking or by physically deleting the token's slot.

        Returns (grid positions covered, predictions at those positions);
        test hook for the masking-equals-deletion property.
        """
        tokens = self._tokens(image)
        removed = plan.visible[i]
        vis = torch.as_tensor(plan.visible, dtype=torch.long).unsqueeze(0)
        t = torch.from_numpy(tokens[np.asarray(plan.visible)]).unsqueeze(0)
        with torch.no_grad():
            encoded = self.net.encode(t, vis)
            if delete:
                keep_np = np.asarray([p for p in range(self.grid.n_total) if p != removed])
                keep = torch.as_tensor(keep_np, dtype=torch.long)
                pred = self.net.decode(encoded, vis, keep=keep)
                return keep_np, pred.squeeze(0).numpy()
            attn_mask = self._decoder_exclusion_mask([removed])
            pred = self.net.decode(encoded, vis, attn_mask=attn_mask)
        positions = np.arange(self.grid.n_total)
        return positions, pred.squeeze(0).numpy()

    def save(self, path) -> None:
        arrays = {k: v.detach().numpy() for k, v in self.net.state_dict().items()}
        save_checkpoint(path, asdict(self.config), arrays)

    @classmethod
    def load(cls, path, config: MAEConfig | None = None) -> "ReconstructionModel":
        found_cfg, arrays = load_checkpoint(path)
        if config is not None:
            check_config(asdict(config), found_cfg, path)
        cfg = MAEConfig(**found_cfg)
        torch.manual_seed(cfg.seed)
        net = _MAENet(cfg)
        net.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
        return cls(net, cfg)


def init_model(config: MAEConfig, seed: int | None = None) -> ReconstructionModel:
    """Freshly initialized (untrained) model; the baseline for evaluation."""
    torch.manual_seed(config.seed if seed is None else seed)
    return ReconstructionModel(_MAENet(config), config)


def _batch_loss(
    net: _MAENet, tokens: torch.Tensor, vis_idx: torch.Tensor, cfg: MAEConfig
) -> torch.Tensor:
    b, n_total, _ = tokens.shape
    gathered = torch.gather(
        tokens, 1, vis_idx.unsqueeze(-1).expand(-1, -1, tokens.shape[-1])
    )
    pred = net.decode(net.encode(gathered, vis_idx), vis_idx)
    target = _transform_targets(tokens, cfg.target_transform)
    per_patch = ((pred - target) ** 2).mean(dim=-1)
    masked = torch.ones(b, n_total, dtype=torch.bool)
    masked.scatter_(1, vis_idx, False)
    return per_patch[masked].mean()


def _sample_visible_batch(
    rng: np.random.Generator, batch: int, n_total: int, n_vis: int
) -> torch.Tensor:
    idx = np.stack([np.sort(rng.permutation(n_total)[:n_vis]) for _ in range(batch)])
    return torch.as_tensor(idx, dtype=torch.long)


def masked_loss(model: ReconstructionModel, images: list[Image], seed: int = 0) -> float:
    """Held-out masked-reconstruction loss with per-image fixed plans."""
    if not images:
        raise ValueError("empty evaluation set")
    cfg = model.config
    n_vis = visible_count(cfg.grid, cfg.masking_ratio)
    tokens = torch.from_numpy(
        np.stack([patchify(im, cfg.grid).astype(np.float32) for im in images])
    )
    rng = np.random.default_rng(seed)
    vis_idx = _sample_visible_batch(rng, len(images), cfg.grid.n_total, n_vis)
    with torch.no_grad():
        return float(_batch_loss(model.net, tokens, vis_idx, cfg))


def pretrain_mae(
    images: list[Image], config: MAEConfig, log_every: int = 0
) -> ReconstructionModel:
    """Train a masked autoencoder on raw images; fresh masks every epoch."""
    if not images:
        raise ValueError("empty training set")
    cfg = config
    grid = cfg.grid
    n_vis = visible_count(grid, cfg.masking_ratio)
    tokens_all = torch.from_numpy(
        np.stack([patchify(im, grid).astype(np.float32) for im in images])
    )
    torch.manual_seed(cfg.seed)
    net = _MAENet(cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    epoch_losses: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(images))
        total, count = 0.0, 0
        for start in range(0, len(images), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            tokens = tokens_all[batch_idx]
            vis_idx = _sample_visible_batch(rng, len(batch_idx), grid.n_total, n_vis)
            loss = _batch_loss(net, tokens, vis_idx, cfg)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch_idx)
            count += len(batch_idx)
            step += 1
        epoch_losses.append(total / count)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"mae epoch {epoch + 1}/{cfg.epochs} loss {epoch_losses[-1]:.6f}")
    metadata = {
        "epochs": cfg.epochs,
        "epoch_losses": epoch_losses,
        "final_loss": epoch_losses[-1],
    }
    return ReconstructionModel(net, cfg, metadata)
