"""Downstream classification probe trained only on retained patches.

A small transformer consumes the selected patches with positional embeddings
at their true grid positions, mean-pools, and classifies. keep_ratio 1.0
degenerates to a full-patch baseline classifier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..grid import GridSpec, Image, patchify
from ..nn import Block

__all__ = ["ProbeConfig", "ProbeItem", "PatchProbe", "train_probe", "select_items"]


@dataclass(frozen=True)
class ProbeConfig:
    n_classes: int
    depth: int = 2
    width: int = 64
    heads: int = 4
    epochs: int = 12
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0


@dataclass
class ProbeItem:
    patches: np.ndarray  # (k, token_dim)
    positions: np.ndarray  # (k,)
    label: int


class PatchProbe(nn.Module):
    def __init__(self, cfg: ProbeConfig, n_positions: int, token_dim: int):
        super().__init__()
        self.embed = nn.Linear(token_dim, cfg.width)
        self.pos = nn.Parameter(torch.zeros(n_positions, cfg.width))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(Block(cfg.width, cfg.heads) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.width)
        self.head = nn.Linear(cfg.width, cfg.n_classes)

    def forward(self, tokens: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        x = self.embed(tokens) + self.pos[idx]
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x).mean(dim=1))


def select_items(
    images: Sequence[Image],
    labels: Sequence[int],
    grid: GridSpec,
    select_fn: Callable[[Image], np.ndarray],
) -> list[ProbeItem]:
    """Build probe items by applying a selection function per image."""
    items = []
    for image, label in zip(images, labels):
        indices = np.sort(np.asarray(select_fn(image), dtype=np.int64))
        patches = patchify(image, grid)[indices]
        items.append(ProbeItem(patches=patches.astype(np.float32), positions=indices, label=int(label)))
    return items


def _stack(items: Sequence[ProbeItem]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    tokens = torch.from_numpy(np.stack([it.patches for it in items]))
    idx = torch.as_tensor(np.stack([it.positions for it in items]), dtype=torch.long)
    labels = torch.as_tensor([it.label for it in items], dtype=torch.long)
    return tokens, idx, labels


def train_probe(
    train_items: Sequence[ProbeItem],
    heldout_items: Sequence[ProbeItem],
    grid: GridSpec,
    config: ProbeConfig,
) -> tuple[PatchProbe, float]:
    """Train the probe; returns (model, held-out top-1 accuracy)."""
    if not train_items or not heldout_items:
        raise ValueError("probe training needs non-empty train and held-out sets")
    token_dim = train_items[0].patches.shape[1]
    torch.manual_seed(config.seed)
    net = PatchProbe(config, grid.n_total, token_dim)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = rng.permutation(len(train_items))
        for start in range(0, len(order), config.batch_size):
            batch = [train_items[i] for i in order[start : start + config.batch_size]]
            tokens, idx, labels = _stack(batch)
            loss = F.cross_entropy(net(tokens, idx), labels)
            if not torch.isfinite(loss):
                raise RuntimeError("non-finite probe loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(heldout_items), config.batch_size):
            batch = heldout_items[start : start + config.batch_size]
            tokens, idx, labels = _stack(batch)
            correct += int((net(tokens, idx).argmax(dim=1) == labels).sum())
    return net, correct / len(heldout_items)
