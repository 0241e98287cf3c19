"""Training schedules: CE only, contrastive pretraining then finetuning, and multitask."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .augment import AugmentConfig, augment
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import FeatureSchema, SequenceBatch, StudentSequence, TaskKind, build_batch
from .encoders import EncoderConfig, EncoderStack
from .errors import SaiclError
from .evaluation import evaluate_task
from .losses import (LossConfig, c_supcpc, combined_loss, concat_infonce, concat_supcontrast,
                     cross_entropy_logits, milcpc, supcpc)
from .optim import RAdam

log = logging.getLogger(__name__)


@dataclass
class Splits:
    train: list[StudentSequence]
    valid: list[StudentSequence]
    test: list[StudentSequence]


@dataclass
class Stage:
    name: str
    head: str
    contrastive: bool
    batch_size: int
    weight_decay: float
    epochs: int


@dataclass
class TrainRun:
    model: EncoderStack
    history: list[dict] = field(default_factory=list)
    best_valid_auc: float = float("nan")
    status: str = "ok"
    checkpoints: list[str] = field(default_factory=list)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def plan_stages(cfg: TrainConfig, encoder: EncoderConfig) -> list[Stage]:
    main_head = "mlp" if encoder.is_causal else "attention"
    if cfg.mode == "ce_only":
        return [Stage("main", main_head, False, cfg.batch_size_main, cfg.weight_decay_main, cfg.epochs)]
    if cfg.mode == "multitask":
        return [Stage("multitask", main_head, True, cfg.batch_size_main, cfg.weight_decay_main, cfg.epochs)]
    pre_head = "shared" if encoder.is_causal else "attention"
    return [
        Stage("pretrain", pre_head, True, cfg.batch_size_pretrain, cfg.weight_decay_pretrain,
              cfg.pretrain_epochs or cfg.epochs),
        Stage("finetune", main_head, False, cfg.batch_size_main, cfg.weight_decay_main, cfg.epochs),
    ]


def _ce(model: EncoderStack, out, batch: SequenceBatch) -> torch.Tensor:
    dev = out.logits.device
    if batch.task.kind == "DP":
        labels = torch.tensor(batch.sequence_label).to(dev)
        return cross_entropy_logits(out.logits, labels)
    labels = torch.tensor(batch.anchor_label).to(dev)
    return cross_entropy_logits(out.logits, labels, out.valid)


def _views(model: EncoderStack, chunk, task, schema, L, aug: AugmentConfig, rng, seed):
    """Pooled, projected embeddings of two augmented views per sequence: ``(N, 2, D)``."""
    zs = []
    for v in range(2):
        views = [augment(s, aug, rng, schema.num_items) for s in chunk]
        batch = build_batch(views, L, task, seed + v, schema)
        cat, cont, valid = model.tensors(batch)
        H = model.encode(model.embedding(cat, cont, valid), valid)
        zs.append(model.project_out(model.pooled(H, valid)))
    return torch.stack(zs, dim=1)


def training_loss(model: EncoderStack, chunk: Sequence[StudentSequence], batch: SequenceBatch, cfg: TrainConfig,
                  loss_cfg: LossConfig, aug: AugmentConfig, contrastive: bool, seed: int) -> tuple[torch.Tensor, dict]:
    """Loss for one minibatch plus its scalar components."""
    out = model(batch)
    ce = _ce(model, out, batch)
    parts = {"ce": float(ce.detach())}
    if not contrastive:
        return ce, parts
    gen = torch.Generator().manual_seed(seed)
    objective = cfg.objective
    L, task, schema = model.cfg.seq_len, batch.task, model.schema
    if objective.startswith("concat"):
        rng = np.random.default_rng([aug.seed, seed])
        zv = _views(model, chunk, task, schema, L, aug, rng, seed)
        if objective == "concat_self":
            term = concat_infonce(zv, loss_cfg)
            parts["concat_infonce"] = float(term.detach())
            return combined_loss(ce, loss_cfg, "self", milcpc=term), parts
        labels = torch.tensor(batch.sequence_label)
        term = concat_supcontrast(zv, labels, loss_cfg)
        parts["concat_supcontrast"] = float(term.detach())
        return combined_loss(ce, loss_cfg, "sup", supcpc=term, c_supcpc=torch.zeros_like(term)), parts

    H, P, cb = out.H, out.P, batch
    if aug.apply_to_interaction and not aug.is_identity:
        rng = np.random.default_rng([aug.seed, seed])
        cb = build_batch([augment(s, aug, rng, schema.num_items) for s in chunk], L, task, seed, schema)
        cat, cont, valid = model.tensors(cb)
        P = model.embedding(cat, cont, valid)
        H = model.encode(P, valid)
    valid = torch.tensor(cb.valid_mask)
    Z, R = model.project_out(H), model.project_inter(P)
    if objective == "self":
        term = milcpc(Z, R, valid, loss_cfg, generator=gen)
        parts["milcpc"] = float(term.detach())
        return combined_loss(ce, loss_cfg, "self", milcpc=term), parts
    labels = torch.tensor(cb.anchor_label)
    items = torch.tensor(cb.anchor_item)
    s = supcpc(Z, R, labels, valid, loss_cfg, generator=gen)
    gen.manual_seed(seed)
    c = c_supcpc(Z, R, labels, items, valid, loss_cfg, generator=gen)
    parts["supcpc"], parts["c_supcpc"] = float(s.detach()), float(c.detach())
    return combined_loss(ce, loss_cfg, "sup", supcpc=s, c_supcpc=c), parts


def train(cfg: TrainConfig, data: Splits, encoder_cfg: EncoderConfig, loss_cfg: LossConfig, task: TaskKind,
          schema: FeatureSchema, aug: AugmentConfig | None = None, seed: int = 0, out_dir: str | Path | None = None,
          run_config: dict | None = None) -> TrainRun:
    """Run every stage of ``cfg.mode``; the returned model is the best validation checkpoint."""
    aug = aug or AugmentConfig()
    if not data.train or not data.valid:
        raise SaiclError("empty_batch", "training needs non-empty train and valid splits")
    dtype = getattr(torch, cfg.dtype)
    torch.manual_seed(_seed(seed, 0))
    model = EncoderStack(encoder_cfg, schema).to(dtype)
    run = TrainRun(model)
    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = (out / "metrics.jsonl").open("w")

    def record(row: dict) -> None:
        run.history.append(row)
        if metrics_fh is not None:
            metrics_fh.write(json.dumps(row) + "\n")
            metrics_fh.flush()

    try:
        for s_idx, stage in enumerate(plan_stages(cfg, encoder_cfg)):
            if stage.name == "finetune":
                model.drop_projections()
            torch.manual_seed(_seed(seed, 1, s_idx))
            model.set_head(stage.head)
            best_auc, best_state, best_epoch = -math.inf, copy.deepcopy(model.state_dict()), -1
            opt = RAdam(model.named_parameters(), cfg.learning_rate, stage.weight_decay)
            diverged = False
            for epoch in range(stage.epochs):
                model.train()
                order = np.random.default_rng([seed, s_idx, epoch]).permutation(len(data.train))
                sums: dict[str, float] = {}
                n_batches = 0
                for b_idx, lo in enumerate(range(0, len(order), stage.batch_size)):
                    chunk = [data.train[i] for i in order[lo:lo + stage.batch_size]]
                    bseed = _seed(seed, s_idx, epoch, b_idx)
                    batch = build_batch(chunk, encoder_cfg.seq_len, task, bseed, schema)
                    try:
                        loss, parts = training_loss(model, chunk, batch, cfg, loss_cfg, aug, stage.contrastive, bseed)
                    except SaiclError as exc:
                        if exc.code == "no_labels":
                            continue
                        raise
                    if not torch.isfinite(loss):
                        diverged = True
                        break
                    opt.zero_grad()
                    loss.backward()
                    try:
                        opt.step()
                    except SaiclError as exc:
                        if exc.code != "nan_grad":
                            raise
                        log.error("%s", exc)
                        diverged = True
                        break
                    parts["loss"] = float(loss.detach())
                    for k, v in parts.items():
                        sums[k] = sums.get(k, 0.0) + v
                    n_batches += 1
                if diverged:
                    record({"stage": stage.name, "epoch": epoch, "split": "train", "status": "diverged"})
                    break
                record({"stage": stage.name, "epoch": epoch, "split": "train",
                        **{k: v / max(n_batches, 1) for k, v in sums.items()}})
                rep = evaluate_task(model, data.valid, task, "valid", cfg.eval_batch_size)
                record({"stage": stage.name, "epoch": epoch, "split": "valid", "auc": rep.auc, "acc": rep.acc})
                if rep.auc > best_auc:
                    best_auc, best_epoch = rep.auc, epoch
                    best_state = copy.deepcopy(model.state_dict())
                elif epoch - best_epoch >= cfg.patience:
                    break
            model.load_state_dict(best_state)
            run.best_valid_auc = best_auc
            if diverged:
                run.status = "diverged"
            if out is not None and stage.name == "pretrain":
                p = save_checkpoint(out / "pretrain.pt", model, run_config,
                                    {"stage": stage.name, "best_epoch": best_epoch, "valid_auc": best_auc})
                run.checkpoints.append(str(p))
            if diverged:
                break
        model.drop_projections()
        model.eval()
        if out is not None:
            meta = {"stage": "final", "valid_auc": run.best_valid_auc, "status": run.status,
                    "parent": run.checkpoints[-1] if run.checkpoints else None}
            run.checkpoints.append(str(save_checkpoint(out / "checkpoint.pt", model, run_config, meta)))
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return run
