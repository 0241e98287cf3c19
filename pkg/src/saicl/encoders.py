"""Input embedding, sequence backbones, projection heads and output heads.

Tensors are batch-first: ``P`` and ``H`` are ``(B, L, dim)``. For next-step
tasks (KT, CondDP) the backbone reads ``[start, p_0, ..., p_{L-2}]`` so the
hidden state at position ``t`` has only seen interactions before ``t``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import NO_LABEL, FeatureSchema, SequenceBatch
from .errors import SaiclError

BACKBONES = ("lstm_kt", "saedp_dp", "causal_tx_conddp")
HEADS = ("shared", "mlp", "attention")


@dataclass
class EncoderConfig:
    backbone: str = "lstm_kt"
    hidden_dim: int = 100
    seq_len: int = 100
    dropout: float = 0.2
    use_position: bool = True
    saedp_channels: list[int] = field(default_factory=lambda: [32, 16, 32])
    saedp_kernel: int = 7
    saedp_heads: int = 4
    saedp_ff: int = 128
    saedp_dropout: float = 0.1
    tx_heads: int = 5
    tx_ff: int = 100
    tx_dropout: float = 0.2
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise SaiclError("config_error", f"encoder.backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.hidden_dim < 1 or self.seq_len < 1:
            raise SaiclError("config_error", "encoder.hidden_dim and encoder.seq_len must be >= 1")
        if self.backbone == "causal_tx_conddp" and self.hidden_dim % self.tx_heads:
            raise SaiclError("config_error", f"hidden_dim {self.hidden_dim} not divisible by tx_heads {self.tx_heads}")
        if self.backbone == "saedp_dp" and self.saedp_channels[-1] % self.saedp_heads:
            raise SaiclError("config_error", "last SAEDP channel size must be divisible by saedp_heads")
        if self.saedp_kernel % 2 == 0:
            raise SaiclError("config_error", "saedp_kernel must be odd to preserve length")
        for name in ("dropout", "saedp_dropout", "tx_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise SaiclError("config_error", f"encoder.{name} must be in [0, 1)")

    @property
    def is_causal(self) -> bool:
        return self.backbone != "saedp_dp"

    @property
    def output_dim(self) -> int:
        return self.saedp_channels[-1] if self.backbone == "saedp_dp" else self.hidden_dim


class InputEmbedding(nn.Module):
    """Sum of one column per categorical feature plus a weight vector per continuous feature."""

    def __init__(self, schema: FeatureSchema, dim: int, seq_len: int, use_position: bool = True):
        super().__init__()
        self.schema = schema
        self.seq_len = seq_len
        bound = 1.0 / math.sqrt(dim)
        # +2 rows: padding index, then mask index
        self.tables = nn.ModuleDict({name: nn.Embedding(card + 2, dim) for name, card in schema.categorical.items()})
        self.position = nn.Embedding(seq_len + 1, dim) if use_position else None
        self.continuous = nn.Parameter(torch.empty(len(schema.continuous), dim).uniform_(-bound, bound))
        for table in self.tables.values():
            nn.init.uniform_(table.weight, -bound, bound)
        if self.position is not None:
            nn.init.uniform_(self.position.weight, -bound, bound)

    def forward(self, cat: dict[str, torch.Tensor], cont: dict[str, torch.Tensor], valid: torch.Tensor) -> torch.Tensor:
        out = None
        for name, table in self.tables.items():
            idx = cat[name]
            if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= table.num_embeddings):
                raise SaiclError("embedding_oob", f"feature {name!r} index outside [0, {table.num_embeddings})")
            e = table(idx)
            out = e if out is None else out + e
        if self.position is not None:
            B, L = valid.shape
            if L > self.seq_len:
                raise SaiclError("embedding_oob", f"sequence length {L} exceeds configured seq_len {self.seq_len}")
            pos = torch.arange(L, device=valid.device).expand(B, L)
            pos = torch.where(valid, pos, torch.full_like(pos, self.seq_len))
            out = out + self.position(pos)
        for k, name in enumerate(self.schema.continuous):
            out = out + cont[name].unsqueeze(-1).to(out.dtype) * self.continuous[k]
        return out

    @property
    def item_table(self) -> torch.Tensor:
        return self.tables["item"].weight[: self.schema.num_items]


class LSTMEncoder(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.lstm = nn.LSTM(dim, dim, batch_first=True)

    def forward(self, x: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        return self.lstm(x)[0]


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product self-attention with padding and optional causal masks."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % heads:
            raise SaiclError("config_error", f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)
        self.last_weights: Optional[torch.Tensor] = None

    def forward(self, x: torch.Tensor, valid: torch.Tensor | None, causal: bool) -> torch.Tensor:
        B, L, D = x.shape
        h, dh = self.heads, D // self.heads
        split = lambda t: t.view(B, L, h, dh).transpose(1, 2)  # noqa: E731
        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        allowed = torch.ones(L, L, dtype=torch.bool, device=x.device)
        if causal:
            allowed = torch.tril(allowed)
        allowed = allowed.expand(B, 1, L, L)
        if valid is not None:
            allowed = allowed & valid[:, None, None, :]
        scores = scores.masked_fill(~allowed, float("-inf"))
        weights = torch.softmax(scores, dim=-1).nan_to_num(0.0)
        self.last_weights = weights.detach()
        out = (self.drop(weights) @ v).transpose(1, 2).reshape(B, L, D)
        return self.o(out)


class TransformerLayer(nn.Module):
    """Post-norm encoder layer: attention and ReLU feedforward blocks, each residual + LayerNorm."""

    def __init__(self, dim: int, heads: int, ff: int, dropout: float, causal: bool):
        super().__init__()
        self.causal = causal
        self.attn = SelfAttention(dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, ff)
        self.ff2 = nn.Linear(ff, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        x = self.norm1(x + self.drop(self.attn(x, valid, self.causal)))
        y = self.ff2(self.drop(F.relu(self.ff1(x))))
        return self.norm2(x + self.drop(y))


class MaskedBatchNorm1d(nn.Module):
    """BatchNorm over channels of ``(B, C, L)`` whose training statistics ignore padded positions."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        if self.training:
            m = valid[:, None, :].to(x.dtype)
            n = m.sum().clamp_min(1.0)
            mean = (x * m).sum(dim=(0, 2)) / n
            var = (((x - mean[None, :, None]) ** 2) * m).sum(dim=(0, 2)) / n
            with torch.no_grad():
                unbiased = var * n / (n - 1).clamp_min(1.0)
                self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean.detach())
                self.running_var.mul_(1 - self.momentum).add_(self.momentum * unbiased.detach())
        else:
            mean, var = self.running_mean, self.running_var
        x = (x - mean[None, :, None]) / torch.sqrt(var[None, :, None] + self.eps)
        return x * self.weight[None, :, None] + self.bias[None, :, None]


class SAEDPEncoder(nn.Module):
    """Three length-preserving 1D convolutions (BatchNorm + ReLU each) then a bidirectional transformer layer."""

    def __init__(self, dim: int, channels=(32, 16, 32), kernel: int = 7, heads: int = 4, ff: int = 128,
                 dropout: float = 0.1, bn_momentum: float = 0.1):
        super().__init__()
        sizes = [dim, *channels]
        self.convs = nn.ModuleList(nn.Conv1d(a, b, kernel, padding=kernel // 2) for a, b in zip(sizes, sizes[1:]))
        self.norms = nn.ModuleList(MaskedBatchNorm1d(c, bn_momentum) for c in channels)
        self.transformer = TransformerLayer(channels[-1], heads, ff, dropout, causal=False)

    def forward(self, x: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        if valid is None:
            valid = torch.ones(x.shape[:2], dtype=torch.bool, device=x.device)
        m = valid[:, None, :].to(x.dtype)
        y = x.transpose(1, 2)
        for conv, norm in zip(self.convs, self.norms):
            # zeroed pads look exactly like the conv's own zero padding
            y = F.relu(norm(conv(y * m), valid))
        return self.transformer(y.transpose(1, 2) * m.transpose(1, 2), valid)


class CausalTransformerEncoder(nn.Module):
    def __init__(self, dim: int, heads: int = 5, ff: int = 100, dropout: float = 0.2):
        super().__init__()
        self.layer = TransformerLayer(dim, heads, ff, dropout, causal=True)

    def forward(self, x: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        return self.layer(x, valid)


class SharedItemHead(nn.Module):
    """Logit for item q is ``h . W_in[item][q] + b_q``; item vectors are the input embedding rows."""

    def __init__(self, embedding: InputEmbedding):
        super().__init__()
        # plain attribute: the table belongs to the embedding module
        object.__setattr__(self, "_embedding", embedding)
        self.bias = nn.Parameter(torch.zeros(embedding.schema.num_items))

    def all_logits(self, h: torch.Tensor) -> torch.Tensor:
        W = self._embedding.item_table
        if h.dim() == 2:
            return torch.addmm(self.bias, h, W.T)
        return h @ W.T + self.bias


class MLPHead(nn.Module):
    """Pointwise two-layer MLP from a student embedding to one logit per item."""

    def __init__(self, in_dim: int, hidden: int, num_items: int, dropout: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, num_items)
        self.drop = nn.Dropout(dropout)

    def all_logits(self, h: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(self.drop(h))))


class AttentionPoolHead(nn.Module):
    """Attention-weighted sum over valid positions followed by an MLP to one sequence logit."""

    def __init__(self, in_dim: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.score = nn.Sequential(nn.Linear(in_dim, hidden), nn.Tanh(), nn.Linear(hidden, 1))
        self.mlp = nn.Sequential(nn.Dropout(dropout), nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, H: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        s = self.score(H).squeeze(-1).masked_fill(~valid, float("-inf"))
        alpha = torch.softmax(s, dim=-1)
        pooled = (alpha.unsqueeze(-1) * H).sum(dim=1)
        return self.mlp(pooled).squeeze(-1)


@dataclass
class Output:
    logits: torch.Tensor
    H: torch.Tensor
    P: torch.Tensor
    valid: torch.Tensor

    @property
    def probs(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)


class EncoderStack(nn.Module):
    """Embedding, backbone, contrastive projections and a task head."""

    def __init__(self, cfg: EncoderConfig, schema: FeatureSchema, head: str | None = None):
        super().__init__()
        self.cfg, self.schema = cfg, schema
        D = cfg.hidden_dim
        self.embedding = InputEmbedding(schema, D, cfg.seq_len, cfg.use_position)
        bound = 1.0 / math.sqrt(D)
        self.start = nn.Parameter(torch.empty(D).uniform_(-bound, bound))
        if cfg.backbone == "lstm_kt":
            self.backbone = LSTMEncoder(D)
        elif cfg.backbone == "saedp_dp":
            self.backbone = SAEDPEncoder(D, cfg.saedp_channels, cfg.saedp_kernel, cfg.saedp_heads, cfg.saedp_ff,
                                         cfg.saedp_dropout, cfg.bn_momentum)
        else:
            self.backbone = CausalTransformerEncoder(D, cfg.tx_heads, cfg.tx_ff, cfg.tx_dropout)
        hd = cfg.output_dim
        self.proj_out: Optional[nn.Module] = nn.Sequential(nn.Linear(hd, D), nn.ReLU(), nn.Linear(D, D))
        self.proj_inter: Optional[nn.Module] = nn.Linear(D, D)
        self.head_kind = ""
        self.head: nn.Module
        self.set_head(head or ("mlp" if cfg.is_causal else "attention"))

    # -- heads -----------------------------------------------------------
    def set_head(self, kind: str) -> None:
        """Install a freshly initialised head of the given kind."""
        if kind not in HEADS:
            raise SaiclError("config_error", f"head must be one of {HEADS}, got {kind!r}")
        hd, D, Q = self.cfg.output_dim, self.cfg.hidden_dim, self.schema.num_items
        if kind == "attention":
            if self.cfg.is_causal:
                raise SaiclError("config_error", "attention head is for sequence-level dropout prediction")
            self.head = AttentionPoolHead(hd, D, self.cfg.dropout)
        elif not self.cfg.is_causal:
            raise SaiclError("config_error", f"{kind} head needs a next-step backbone")
        elif kind == "shared":
            if hd != D:
                raise SaiclError("config_error", "shared head needs backbone output dim == hidden_dim")
            self.head = SharedItemHead(self.embedding)
        else:
            self.head = MLPHead(hd, D, Q, self.cfg.dropout)
        self.head.to(self.start.dtype)
        self.head_kind = kind

    def drop_projections(self) -> None:
        self.proj_out = None
        self.proj_inter = None

    @property
    def has_projections(self) -> bool:
        return self.proj_out is not None

    # -- forward pieces --------------------------------------------------
    def tensors(self, batch: SequenceBatch):
        dev = self.start.device
        cat = {k: torch.tensor(v, device=dev) for k, v in batch.cat.items()}
        cont = {k: torch.tensor(v, device=dev, dtype=self.start.dtype) for k, v in batch.cont.items()}
        valid = torch.tensor(batch.valid_mask, device=dev)
        return cat, cont, valid

    def embed_input(self, batch: SequenceBatch) -> torch.Tensor:
        return self.embedding(*self.tensors(batch))

    def encode(self, P: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        if self.cfg.is_causal:
            start = self.start.expand(P.shape[0], 1, -1)
            P = torch.cat([start, P[:, :-1]], dim=1)
        return self.backbone(P, valid)

    def project_out(self, H: torch.Tensor, normalize: bool = False) -> torch.Tensor:
        if self.proj_out is None:
            raise SaiclError("config_error", "projections were discarded after contrastive training")
        Z = self.proj_out(H)
        return F.normalize(Z, dim=-1) if normalize else Z

    def project_inter(self, P: torch.Tensor, normalize: bool = False) -> torch.Tensor:
        if self.proj_inter is None:
            raise SaiclError("config_error", "projections were discarded after contrastive training")
        R = self.proj_inter(P)
        return F.normalize(R, dim=-1) if normalize else R

    def predict_all_items(self, h: torch.Tensor) -> torch.Tensor:
        """Probabilities for every item from student embedding(s) ``(..., D)``; Theta(DQ) per embedding."""
        if self.head_kind == "attention":
            raise SaiclError("config_error", "sequence-level head has no per-item scores")
        return self.head.all_logits(h).sigmoid_()

    def logits_from_hidden(self, H: torch.Tensor, valid: torch.Tensor, items: torch.Tensor | None) -> torch.Tensor:
        if self.head_kind == "attention":
            return self.head(H, valid)
        all_logits = self.head.all_logits(H)
        idx = items.clamp_min(0).unsqueeze(-1)
        return all_logits.gather(-1, idx).squeeze(-1)

    def forward(self, batch: SequenceBatch) -> Output:
        cat, cont, valid = self.tensors(batch)
        P = self.embedding(cat, cont, valid)
        H = self.encode(P, valid)
        items = torch.tensor(batch.anchor_item, device=P.device)
        return Output(self.logits_from_hidden(H, valid, items), H, P, valid)

    def pooled(self, H: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        """Masked mean of hidden states: the sequence-level embedding for sample-level objectives."""
        m = valid.unsqueeze(-1).to(H.dtype)
        return (H * m).sum(dim=1) / m.sum(dim=1).clamp_min(1.0)


def config_dict(cfg: EncoderConfig) -> dict:
    return asdict(cfg)
