"""The patch-scoring transformer.

Tokens are raw flattened patch pixels plus a learned positional embedding at
the patch's true grid position (the embedding can be disabled, which makes
the network permutation-equivariant over tokens). One scalar score per
token. Sparse training feeds only an instance's visible patches; scoring a
whole image feeds every patch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from ..checkpoint import check_config, load_checkpoint, save_checkpoint
from ..grid import GridSpec, Image, patchify
from ..nn import Block

__all__ = ["RankerConfig", "RankerModel", "init_ranker"]


@dataclass(frozen=True)
class RankerConfig:
    image_size: int = 32
    patch_size: int = 4
    channels: int = 3
    depth: int = 4
    width: int = 128
    heads: int = 4
    use_positions: bool = True
    sparse: bool = True
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")

    @property
    def grid(self) -> GridSpec:
        return GridSpec.for_image(self.image_size, self.image_size, self.patch_size)

    @property
    def token_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


class _RankerNet(nn.Module):
    def __init__(self, cfg: RankerConfig):
        super().__init__()
        self.use_positions = cfg.use_positions
        self.embed = nn.Linear(cfg.token_dim, cfg.width)
        self.pos = nn.Parameter(torch.zeros(cfg.grid.n_total, cfg.width))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(Block(cfg.width, cfg.heads) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.width)
        self.head = nn.Linear(cfg.width, 1)

    def forward(
        self, tokens: torch.Tensor, idx: torch.Tensor, record: bool = False
    ) -> torch.Tensor:
        x = self.embed(tokens)
        if self.use_positions:
            x = x + self.pos[idx]
        for block in self.blocks:
            x = block(x, record=record)
        return self.head(self.norm(x)).squeeze(-1)


class RankerModel:
    def __init__(self, net: _RankerNet, config: RankerConfig, metadata: dict | None = None):
        self.net = net
        self.config = config
        self.metadata = metadata or {}
        self.net.eval()

    @property
    def grid(self) -> GridSpec:
        return self.config.grid

    def score(self, patches: np.ndarray, positions: np.ndarray) -> np.ndarray:
        """Scores for one token set: (n, token_dim) pixels at grid positions."""
        t = torch.from_numpy(np.asarray(patches, dtype=np.float32)).unsqueeze(0)
        idx = torch.as_tensor(np.asarray(positions), dtype=torch.long).unsqueeze(0)
        with torch.no_grad():
            return self.net(t, idx).squeeze(0).numpy()

    def score_image(self, image: Image, grid: GridSpec | None = None) -> np.ndarray:
        """One score per grid cell; rank-meaningful only, no calibrated scale."""
        grid = grid or self.grid
        if grid.n_total != self.grid.n_total or grid.patch_size != self.config.patch_size:
            raise ValueError("grid does not match the ranker configuration")
        patches = patchify(image, grid)
        return self.score(patches, np.arange(grid.n_total))

    def score_images(self, images: list[Image]) -> np.ndarray:
        """Batched full-grid scoring, (len(images), n_total)."""
        grid = self.grid
        tokens = torch.from_numpy(
            np.stack([patchify(im, grid).astype(np.float32) for im in images])
        )
        idx = torch.arange(grid.n_total).unsqueeze(0).expand(len(images), -1)
        with torch.no_grad():
            return self.net(tokens, idx).numpy()

    def attention_maps(self, images: list[Image]) -> list[np.ndarray]:
        """Per-image attention weights (layers, heads, n_total, n_total)."""
        grid = self.grid
        out = []
        for im in images:
            t = torch.from_numpy(patchify(im, grid).astype(np.float32)).unsqueeze(0)
            idx = torch.arange(grid.n_total).unsqueeze(0)
            with torch.no_grad():
                self.net(t, idx, record=True)
            out.append(
                np.stack([b.attn.last_weights.squeeze(0).numpy() for b in self.net.blocks])
            )
        return out

    def save(self, path) -> None:
        arrays = {k: v.detach().numpy() for k, v in self.net.state_dict().items()}
        save_checkpoint(path, asdict(self.config), arrays)

    @classmethod
    def load(cls, path, config: RankerConfig | None = None) -> "RankerModel":
        found_cfg, arrays = load_checkpoint(path)
        if config is not None:
            check_config(asdict(config), found_cfg, path)
        cfg = RankerConfig(**found_cfg)
        torch.manual_seed(cfg.seed)
        net = _RankerNet(cfg)
        net.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
        return cls(net, cfg)


def init_ranker(config: RankerConfig, seed: int | None = None) -> RankerModel:
    torch.manual_seed(config.seed if seed is None else seed)
    return RankerModel(_RankerNet(config), config)
