"""Training loop for the patch ranker.

The model's score Jacobian comes from autograd, but dL/ds is the analytic
gradient from :mod:`ltrp.ranker.losses`, injected via ``backward(gradient=)``.
Per-epoch held-out quality is the mean Kendall tau between predicted and
pseudo scores (instances with all-tied pseudo scores are skipped).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch
from scipy.stats import kendalltau

from ..grid import Image, patchify
from ..scorer import RankingInstance
from .losses import LossKind, loss_gradient, ranking_loss
from .model import RankerConfig, RankerModel, _RankerNet

__all__ = ["train_ranker", "heldout_kendall_tau"]


def _instance_tensors(
    instances: Sequence[RankingInstance],
    sparse: bool,
    image_provider: Callable[[str], Image] | None,
    grid,
) -> tuple[torch.Tensor, torch.Tensor, list[np.ndarray], np.ndarray | None]:
    """(tokens, positions, pseudo scores per instance, visible index matrix).

    Sparse mode feeds each instance's visible patches; the non-sparse
    variant feeds every patch of the image and scores visible positions.
    """
    ys = [inst.scores.scores.astype(np.float64) for inst in instances]
    if sparse:
        tokens = np.stack([inst.patches.astype(np.float32) for inst in instances])
        idx = np.stack([np.asarray(inst.plan.visible) for inst in instances])
        return torch.from_numpy(tokens), torch.as_tensor(idx, dtype=torch.long), ys, None
    if image_provider is None:
        raise ValueError("non-sparse training requires an image provider")
    tokens = np.stack(
        [
            patchify(image_provider(inst.image_id), grid).astype(np.float32)
            for inst in instances
        ]
    )
    idx = np.tile(np.arange(grid.n_total), (len(instances), 1))
    visible = np.stack([np.asarray(inst.plan.visible) for inst in instances])
    return torch.from_numpy(tokens), torch.as_tensor(idx, dtype=torch.long), ys, visible


def heldout_kendall_tau(
    model: RankerModel,
    instances: Sequence[RankingInstance],
    image_provider: Callable[[str], Image] | None = None,
) -> float:
    """Mean Kendall tau between predicted and pseudo scores."""
    if not instances:
        return float("nan")
    cfg = model.config
    tokens, idx, ys, visible = _instance_tensors(
        instances, cfg.sparse, image_provider, cfg.grid
    )
    with torch.no_grad():
        s = model.net(tokens, idx).numpy()
    taus = []
    for b, y in enumerate(ys):
        sb = s[b] if visible is None else s[b][visible[b]]
        tau = kendalltau(sb, y).statistic
        if np.isfinite(tau):
            taus.append(tau)
    return float(np.mean(taus)) if taus else float("nan")


def train_ranker(
    instances: Sequence[RankingInstance] | Callable[[int], Sequence[RankingInstance]],
    config: RankerConfig,
    loss_kind: LossKind,
    heldout: Sequence[RankingInstance] | None = None,
    image_provider: Callable[[str], Image] | None = None,
    encoder_init=None,
    log_every: int = 0,
) -> RankerModel:
    """Fit the ranker; ``instances`` may be a fixed list or an epoch-indexed
    generator (fresh masks per epoch). Returns the model with a training log
    (epoch, loss, heldout_kendall_tau) in ``metadata``.
    """
    loss_kind = LossKind(loss_kind)
    cfg = config
    torch.manual_seed(cfg.seed)
    net = _RankerNet(cfg)
    if encoder_init is not None:
        _copy_encoder(net, encoder_init, cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    model = RankerModel(net, cfg)
    log: list[dict] = []
    for epoch in range(cfg.epochs):
        epoch_instances = list(instances(epoch) if callable(instances) else instances)
        if not epoch_instances:
            raise ValueError("no training instances")
        if min(inst.plan.n_visible for inst in epoch_instances) < 2:
            raise ValueError("training instances need at least 2 visible patches")
        order = rng.permutation(len(epoch_instances))
        net.train()
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [epoch_instances[i] for i in order[start : start + cfg.batch_size]]
            tokens, idx, ys, visible = _instance_tensors(
                batch, cfg.sparse, image_provider, cfg.grid
            )
            s = net(tokens, idx)
            s_np = s.detach().numpy().astype(np.float64)
            grad = np.zeros_like(s_np)
            for b, y in enumerate(ys):
                sb = s_np[b] if visible is None else s_np[b][visible[b]]
                g = loss_gradient(loss_kind, sb, y)
                if visible is None:
                    grad[b] = g
                else:
                    grad[b][visible[b]] = g
                loss_b = ranking_loss(loss_kind, sb, y)
                if not np.isfinite(loss_b):
                    raise RuntimeError(f"non-finite ranking loss in epoch {epoch}")
                total += loss_b
                count += 1
            opt.zero_grad()
            s.backward(torch.from_numpy((grad / len(batch)).astype(np.float32)))
            opt.step()
        net.eval()
        row = {
            "epoch": epoch + 1,
            "loss": total / count,
            "heldout_kendall_tau": (
                heldout_kendall_tau(model, heldout, image_provider)
                if heldout
                else float("nan")
            ),
        }
        log.append(row)
        if log_every and (epoch + 1) % log_every == 0:
            print(
                f"ranker epoch {row['epoch']}/{cfg.epochs} "
                f"loss {row['loss']:.4f} tau {row['heldout_kendall_tau']:.4f}"
            )
    model.metadata = {"loss_kind": loss_kind.value, "log": log}
    return model


def _copy_encoder(net: _RankerNet, encoder_model, cfg: RankerConfig) -> None:
    """Optional warm start from a reconstruction model's encoder."""
    enc_cfg = encoder_model.config
    if enc_cfg.enc_width != cfg.width or enc_cfg.token_dim != cfg.token_dim:
        raise ValueError("encoder widths do not match the ranker configuration")
    if enc_cfg.enc_depth < cfg.depth:
        raise ValueError("encoder is shallower than the ranker")
    src = encoder_model.net
    net.embed.load_state_dict(src.patch_embed.state_dict())
    for dst_block, src_block in zip(net.blocks, src.enc_blocks):
        dst_block.load_state_dict(src_block.state_dict())
