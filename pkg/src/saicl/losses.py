"""Cross-entropy, interaction-level contrastive objectives and sample-level baselines.

Interaction-level losses take ``Z`` (anchor projections of hidden states) and
``R`` (target projections of input embeddings), both ``(B, L, d)``, plus a
``(B, L)`` valid mask. Every valid position is an anchor, and the candidate
set of an anchor is every other valid position in the batch. Positives are
the candidates sharing the anchor's user (MilCPC), label (SupCPC) or label
and item (C-SupCPC). Anchors without positives contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch
import torch.nn.functional as F

from .errors import SaiclError

EPS_PROB = 1e-7


@dataclass
class LossConfig:
    temperature: float = 0.1
    lambda_self: float = 0.1
    lambda_sup: float = 1.0
    anchor_subsample: Optional[int] = 4096
    future_only_positives: bool = False
    normalize_embeddings: bool = True
    reduction: str = "mean"

    def __post_init__(self):
        if not self.temperature > 0:
            raise SaiclError("config_error", f"loss.temperature must be > 0, got {self.temperature}")
        if self.lambda_self < 0 or self.lambda_sup < 0:
            raise SaiclError("config_error", "loss lambdas must be >= 0")
        if self.reduction not in ("sum", "mean"):
            raise SaiclError("config_error", f"loss.reduction must be 'sum' or 'mean', got {self.reduction!r}")
        if self.anchor_subsample is not None and self.anchor_subsample < 1:
            raise SaiclError("config_error", "loss.anchor_subsample must be >= 1 or null")


def cross_entropy(probs: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean binary cross-entropy over masked entries; probabilities are clamped to [1e-7, 1 - 1e-7]."""
    if mask is None:
        mask = torch.ones_like(labels, dtype=torch.bool)
    mask = mask & (labels >= 0)
    if not bool(mask.any()):
        raise SaiclError("no_labels", "cross-entropy over an empty label set")
    p = probs[mask].clamp(EPS_PROB, 1 - EPS_PROB)
    y = labels[mask].to(p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log1p(-p)).mean()


def cross_entropy_logits(logits: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Same quantity as ``cross_entropy`` computed stably from logits."""
    if mask is None:
        mask = torch.ones_like(labels, dtype=torch.bool)
    mask = mask & (labels >= 0)
    if not bool(mask.any()):
        raise SaiclError("no_labels", "cross-entropy over an empty label set")
    return F.binary_cross_entropy_with_logits(logits[mask], labels[mask].to(logits.dtype))


def _reduce(per_anchor: torch.Tensor, counted: torch.Tensor, reduction: str) -> torch.Tensor:
    total = per_anchor.sum()
    if reduction == "sum":
        return total
    return total / counted.sum().clamp_min(1)


def _contrast(
    Z: torch.Tensor,
    R: torch.Tensor,
    valid: torch.Tensor,
    meta: dict[str, torch.Tensor],
    positive: Callable[[dict, dict], torch.Tensor],
    cfg: LossConfig,
    reduction: str | None,
    generator: torch.Generator | None,
) -> torch.Tensor:
    """Shared machinery: gather valid positions, score anchors against all candidates."""
    reduction = reduction or cfg.reduction
    valid = valid.bool()
    z, r = Z[valid], R[valid]
    cand = {k: v[valid] for k, v in meta.items()}
    n = z.shape[0]
    if n < 2:
        return (Z.sum() + R.sum()) * 0.0
    if cfg.normalize_embeddings:
        z, r = F.normalize(z, dim=-1), F.normalize(r, dim=-1)
    anchors = torch.arange(n, device=z.device)
    if cfg.anchor_subsample is not None and n > cfg.anchor_subsample:
        perm = torch.randperm(n, generator=generator, device="cpu")[: cfg.anchor_subsample]
        anchors = perm.sort().values.to(z.device)
    anc = {k: v[anchors] for k, v in cand.items()}

    logits = z[anchors] @ r.T / cfg.temperature
    not_self = anchors[:, None] != torch.arange(n, device=z.device)[None, :]
    logits = logits.masked_fill(~not_self, float("-inf"))
    log_prob = logits - torch.logsumexp(logits, dim=1, keepdim=True)

    pos = positive(anc, cand) & not_self
    n_pos = pos.sum(dim=1)
    summed = torch.where(pos, log_prob, torch.zeros_like(log_prob)).sum(dim=1)
    has = n_pos > 0
    per_anchor = torch.where(has, -summed / n_pos.clamp_min(1).to(summed.dtype), torch.zeros_like(summed))
    return _reduce(per_anchor, has, reduction)


def _grid(valid: torch.Tensor):
    B, L = valid.shape
    users = torch.arange(B, device=valid.device)[:, None].expand(B, L)
    pos = torch.arange(L, device=valid.device)[None, :].expand(B, L)
    return users, pos


def milcpc(Z, R, valid, cfg: LossConfig, reduction: str | None = None, generator=None) -> torch.Tensor:
    """Self-supervised: positives are the other valid positions of the anchor's own sequence."""
    users, pos = _grid(valid)

    def positive(a, c):
        same = a["user"][:, None] == c["user"][None, :]
        if cfg.future_only_positives:
            same = same & (c["pos"][None, :] > a["pos"][:, None])
        return same

    return _contrast(Z, R, valid, {"user": users, "pos": pos}, positive, cfg, reduction, generator)


def supcpc(Z, R, labels, valid, cfg: LossConfig, reduction: str | None = None, generator=None) -> torch.Tensor:
    """Supervised: positives are candidates (any sequence) whose label equals the anchor's."""

    def positive(a, c):
        return (a["y"][:, None] == c["y"][None, :]) & (a["y"][:, None] >= 0)

    return _contrast(Z, R, valid, {"y": labels}, positive, cfg, reduction, generator)


def c_supcpc(Z, R, labels, items, valid, cfg: LossConfig, reduction: str | None = None, generator=None) -> torch.Tensor:
    """Conditional supervised: positives share both label and conditioning item with the anchor."""

    def positive(a, c):
        same_y = (a["y"][:, None] == c["y"][None, :]) & (a["y"][:, None] >= 0)
        same_q = (a["q"][:, None] == c["q"][None, :]) & (a["q"][:, None] >= 0)
        return same_y & same_q

    return _contrast(Z, R, valid, {"y": labels, "q": items}, positive, cfg, reduction, generator)


def _views(z_views: torch.Tensor, cfg: LossConfig):
    if z_views.dim() != 3 or z_views.shape[1] != 2:
        raise SaiclError("degenerate_batch", f"expected (N, 2, d) views, got {tuple(z_views.shape)}")
    N = z_views.shape[0]
    if N < 2:
        raise SaiclError("degenerate_batch", f"need at least 2 users, got {N}")
    z = torch.cat([z_views[:, 0], z_views[:, 1]], dim=0)
    if cfg.normalize_embeddings:
        z = F.normalize(z, dim=-1)
    logits = z @ z.T / cfg.temperature
    eye = torch.eye(2 * N, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(eye, float("-inf"))
    return N, logits - torch.logsumexp(logits, dim=1, keepdim=True), eye


def concat_infonce(z_views: torch.Tensor, cfg: LossConfig, reduction: str | None = None) -> torch.Tensor:
    """Sample-level InfoNCE over two augmented views per user, ``z_views`` shaped ``(N, 2, d)``."""
    reduction = reduction or cfg.reduction
    N, log_prob, _ = _views(z_views, cfg)
    idx = torch.arange(2 * N, device=z_views.device)
    partner = (idx + N) % (2 * N)
    per_anchor = -log_prob[idx, partner]
    return _reduce(per_anchor, torch.ones_like(per_anchor, dtype=torch.bool), reduction)


def concat_supcontrast(z_views: torch.Tensor, labels: torch.Tensor, cfg: LossConfig, reduction: str | None = None) -> torch.Tensor:
    """Sample-level supervised contrast: positives are all other views with the same sequence label."""
    reduction = reduction or cfg.reduction
    N, log_prob, eye = _views(z_views, cfg)
    y = torch.cat([labels, labels])
    pos = (y[:, None] == y[None, :]) & ~eye & (y[:, None] >= 0)
    n_pos = pos.sum(dim=1)
    summed = torch.where(pos, log_prob, torch.zeros_like(log_prob)).sum(dim=1)
    has = n_pos > 0
    per_anchor = torch.where(has, -summed / n_pos.clamp_min(1).to(summed.dtype), torch.zeros_like(summed))
    return _reduce(per_anchor, has, reduction)


def combined_loss(ce: torch.Tensor, cfg: LossConfig, mode: str, *, milcpc: torch.Tensor | None = None,
                  supcpc: torch.Tensor | None = None, c_supcpc: torch.Tensor | None = None) -> torch.Tensor:
    """``ce + lambda_self * milcpc`` (self) or ``ce + lambda_sup * (supcpc + c_supcpc)`` (sup)."""
    if mode == "self":
        if cfg.lambda_self == 0:
            return ce
        return ce + cfg.lambda_self * milcpc
    if mode == "sup":
        if cfg.lambda_sup == 0:
            return ce
        return ce + cfg.lambda_sup * supcpc + cfg.lambda_sup * c_supcpc
    raise SaiclError("config_error", f"combined loss mode must be 'self' or 'sup', got {mode!r}")
