"""Metrics, the per-interaction evaluation protocol, embedding export and dataset statistics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.stats import rankdata

from .data import StudentSequence, TaskKind, build_batch
from .encoders import EncoderStack
from .errors import SaiclError

LAMBDA_GRID = (0.001, 0.01, 0.1, 1.0)


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) ROC AUC with midranks for ties."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SaiclError("undefined_auc", "AUC needs both classes present")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0:
        raise SaiclError("no_labels", "accuracy over an empty set")
    return float(np.mean((s >= threshold).astype(int) == y))


@dataclass
class EvalReport:
    task: str
    split: str
    auc: float
    acc: float
    n_predictions: int
    lambda_table: Optional[list[dict]] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["lambda_table"] is None:
            del d["lambda_table"]
        return d


def report_from_scores(scores, labels, task: str, split: str) -> EvalReport:
    return EvalReport(task, split, auc(scores, labels), accuracy(scores, labels), int(np.asarray(labels).size))


@dataclass
class Predictions:
    scores: np.ndarray
    labels: np.ndarray
    user_ids: list[str] = field(default_factory=list)
    # index of the predicted interaction in its sequence (-1 for sequence-level)
    positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _windows(seqs: Sequence[StudentSequence], L: int):
    """(sequence index, window offset, first position to read) for sliding next-step evaluation.

    The first window predicts its first ``min(n, L)`` targets; each later target
    ``t`` gets its own window holding the ``L - 1`` interactions before it.
    """
    for i, seq in enumerate(seqs):
        n = len(seq)
        yield i, 0, 0
        for t in range(L, n):
            yield i, t - L + 1, L - 1


@torch.no_grad()
def collect_predictions(model: EncoderStack, seqs: Sequence[StudentSequence], task: TaskKind,
                        batch_size: int = 256) -> Predictions:
    """Score every labelled interaction (KT, CondDP) or every sequence (DP)."""
    was_training = model.training
    model.eval()
    L = model.cfg.seq_len
    schema = model.schema
    scores, labels, users, positions = [], [], [], []
    try:
        if task.kind == "DP":
            for lo in range(0, len(seqs), batch_size):
                chunk = seqs[lo:lo + batch_size]
                batch = build_batch(chunk, L, task, schema=schema, crop="last")
                out = model(batch)
                keep = batch.sequence_label >= 0
                scores.append(out.probs.cpu().double().numpy()[keep])
                labels.append(batch.sequence_label[keep])
                users.extend(u for u, k in zip(batch.user_ids, keep) if k)
                positions.append(np.full(int(keep.sum()), -1, dtype=np.int64))
        else:
            plan = list(_windows(seqs, L))
            for lo in range(0, len(plan), batch_size):
                part = plan[lo:lo + batch_size]
                batch = build_batch([seqs[i] for i, _, _ in part], L, task, schema=schema,
                                    offsets=[off for _, off, _ in part])
                probs = model(batch).probs.cpu().double().numpy()
                for b, (i, off, first) in enumerate(part):
                    take = batch.labeled_mask[b].copy()
                    take[:first] = False
                    idx = np.nonzero(take)[0]
                    scores.append(probs[b, idx])
                    labels.append(batch.anchor_label[b, idx])
                    users.extend([seqs[i].user_id] * idx.size)
                    positions.append(idx + off)
    finally:
        model.train(was_training)
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)  # noqa: E731
    return Predictions(cat(scores, np.float64), cat(labels, np.int64), users, cat(positions, np.int64))


def evaluate_task(model: EncoderStack, seqs: Sequence[StudentSequence], task: TaskKind, split: str = "test",
                  batch_size: int = 256) -> EvalReport:
    preds = collect_predictions(model, seqs, task, batch_size)
    return report_from_scores(preds.scores, preds.labels, task.kind, split)


@torch.no_grad()
def export_embeddings(model: EncoderStack, seqs: Sequence[StudentSequence], task: TaskKind, n_users: int,
                      seed: int = 0) -> list[dict]:
    """Hidden states of the most recent ``L`` interactions of ``n_users`` random users, padding excluded."""
    was_training = model.training
    model.eval()
    try:
        rng = np.random.default_rng(seed)
        n = min(n_users, len(seqs))
        chosen = sorted(rng.choice(len(seqs), size=n, replace=False).tolist())
        picked = [seqs[i] for i in chosen]
        batch = build_batch(picked, model.cfg.seq_len, task, schema=model.schema, crop="last")
        H = model(batch).H.cpu().double().numpy()
    finally:
        model.train(was_training)
    rows = []
    for b, seq in enumerate(picked):
        for t in np.nonzero(batch.valid_mask[b])[0]:
            rows.append({
                "user_id": seq.user_id,
                "position": int(batch.offsets[b] + t),
                "label": int(batch.anchor_label[b, t]),
                "item": int(batch.anchor_item[b, t]),
                "h": H[b, t].tolist(),
            })
    return rows


def write_embeddings_csv(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    dim = len(rows[0]["h"]) if rows else 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "position", "label", "item", *(f"h{k}" for k in range(dim))])
        for r in rows:
            w.writerow([r["user_id"], r["position"], r["label"], r["item"], *(repr(v) for v in r["h"])])


def dataset_stats(seqs: Sequence[StudentSequence]) -> dict:
    """Interaction, user and item counts plus pair sparsity ``1 - |distinct (user, item)| / (users * items)``."""
    n_inter = sum(len(s) for s in seqs)
    users = len({s.user_id for s in seqs})
    items = {x.item_id for s in seqs for x in s.interactions}
    pairs = {(s.user_id, x.item_id) for s in seqs for x in s.interactions}
    denom = users * len(items)
    return {
        "interactions": n_inter,
        "users": users,
        "items": len(items),
        "pair_sparsity": 1.0 - len(pairs) / denom if denom else 0.0,
    }


def sweep_lambda(base_config, grid: Sequence[float] = LAMBDA_GRID, out_dir: str | Path | None = None,
                 workers: int = 1) -> list[dict]:
    """Train one run per lambda and return a table of validation/test metrics."""
    from .pipeline import sweep  # training imports evaluation

    return sweep(base_config, grid, out_dir, workers)
