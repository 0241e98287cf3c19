"""End-to-end pipelines behind the CLI: data loading, training runs, sweeps, exports."""

from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .config import RunConfig, dump_config, from_dict, to_dict
from .data import FeatureSchema, StudentSequence
from .evaluation import LAMBDA_GRID, evaluate_task, export_embeddings, write_embeddings_csv
from .checkpoint import load_checkpoint
from .errors import SaiclError
from .ingest import load_dataset, normalize_continuous, split_users, DatasetSpec
from .synthetic import generate_dp, generate_kt, synthetic_bounds
from .training import Splits, train

log = logging.getLogger(__name__)


def load_sequences(cfg: RunConfig) -> tuple[list[StudentSequence], FeatureSchema]:
    """All retained sequences for the configured task, normalized, plus their feature schema."""
    if cfg.data.source == "synthetic":
        syn = cfg.data.synthetic
        if cfg.task.kind == "KT":
            seqs = generate_kt(syn)
        else:
            seqs = generate_dp(syn, cfg.task)
            seqs = normalize_continuous(seqs, DatasetSpec(bounds=synthetic_bounds()))
        return seqs, FeatureSchema.infer(seqs, cfg.task, num_items=syn.n_items)
    seqs = load_dataset(cfg.data.csv, cfg.task)
    if not seqs:
        raise SaiclError("empty_batch", "no users left after filtering")
    return seqs, FeatureSchema.infer(seqs, cfg.task)


def load_splits(cfg: RunConfig) -> tuple[Splits, FeatureSchema]:
    seqs, schema = load_sequences(cfg)
    train_s, valid_s, test_s = split_users(seqs, tuple(cfg.data.split), cfg.seed)
    return Splits(train_s, valid_s, test_s), schema


def run_training(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Train, evaluate on test, and write config, metrics, checkpoints and report under ``out_dir``."""
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = copy.deepcopy(cfg)
    cfg.out = str(out)
    dump_config(cfg, out / "config.yaml")
    splits, schema = load_splits(cfg)
    run = train(cfg.train, splits, cfg.encoder, cfg.loss, cfg.task, schema, cfg.aug, cfg.train_seed, out,
                to_dict(cfg))
    test = evaluate_task(run.model, splits.test, cfg.task, "test", cfg.train.eval_batch_size)
    valid = evaluate_task(run.model, splits.valid, cfg.task, "valid", cfg.train.eval_batch_size)
    with (out / "metrics.jsonl").open("a") as fh:
        for rep in (valid, test):
            fh.write(json.dumps({"stage": "final", "split": rep.split, "auc": rep.auc, "acc": rep.acc,
                                 "n_predictions": rep.n_predictions}) + "\n")
    summary = {
        "command": "train",
        "status": run.status,
        "out": str(out),
        "checkpoint": run.checkpoints[-1] if run.checkpoints else None,
        "valid_auc": valid.auc,
        "test_auc": test.auc,
        "test_acc": test.acc,
        "n_test_predictions": test.n_predictions,
    }
    (out / "report.json").write_text(json.dumps({"valid": valid.to_dict(), "test": test.to_dict(),
                                                 "status": run.status}, indent=2))
    return summary


def config_from_checkpoint(info: dict) -> RunConfig:
    return from_dict(RunConfig, info["run_config"])


def evaluate_checkpoint(path: str | Path, split: str = "test", cfg: RunConfig | None = None) -> dict:
    model, info = load_checkpoint(path)
    cfg = cfg or config_from_checkpoint(info)
    splits, _ = load_splits(cfg)
    seqs = getattr(splits, split)
    return evaluate_task(model, seqs, cfg.task, split, cfg.train.eval_batch_size).to_dict()


def export_from_checkpoint(path: str | Path, out_csv: str | Path, split: str = "test", n_users: int = 100,
                           seed: int = 0) -> dict:
    model, info = load_checkpoint(path)
    cfg = config_from_checkpoint(info)
    splits, _ = load_splits(cfg)
    rows = export_embeddings(model, getattr(splits, split), cfg.task, n_users, seed)
    write_embeddings_csv(rows, out_csv)
    return {"rows": len(rows), "users": len({r["user_id"] for r in rows}), "dim": len(rows[0]["h"]) if rows else 0,
            "path": str(out_csv)}


def _lambda_config(base: RunConfig, lam: float) -> RunConfig:
    cfg = copy.deepcopy(base)
    if cfg.train.mode == "ce_only":
        cfg.train.mode = "pretrain_finetune"
    if cfg.train.objective in ("self", "concat_self"):
        cfg.loss.lambda_self = float(lam)
    else:
        cfg.loss.lambda_sup = float(lam)
    return cfg


def _sweep_point(args) -> dict:
    base_dict, lam, out = args
    cfg = _lambda_config(from_dict(RunConfig, base_dict), lam)
    summary = run_training(cfg, out)
    return {"lambda": float(lam), "valid_auc": summary["valid_auc"], "test_auc": summary["test_auc"],
            "test_acc": summary["test_acc"], "status": summary["status"], "out": summary["out"]}


def sweep(base: RunConfig, grid: Sequence[float] = LAMBDA_GRID, out_dir: str | Path | None = None,
          workers: int = 1) -> list[dict]:
    """One training run per lambda under ``out_dir/lambda_<value>``; writes ``sweep.json`` and ``sweep.csv``."""
    if not grid:
        raise SaiclError("config_error", "lambda grid is empty")
    out = Path(out_dir or base.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(to_dict(base), lam, out / f"lambda_{lam:g}") for lam in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    (out / "sweep.json").write_text(json.dumps(rows, indent=2))
    with (out / "sweep.csv").open("w") as fh:
        fh.write("lambda,valid_auc,test_auc,test_acc,status\n")
        for r in rows:
            fh.write(f"{r['lambda']:g},{r['valid_auc']:.6f},{r['test_auc']:.6f},{r['test_acc']:.6f},{r['status']}\n")
    return rows
