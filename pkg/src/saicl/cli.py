"""Command line entry point: ``saicl <command> [--config FILE] [--out DIR] [--seed N] [key.path=value ...]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .config import RunConfig, dump_config, load_config
from .errors import SaiclError

COMMANDS = ("generate", "stats", "train", "evaluate", "sweep-lambda", "export-embeddings")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saicl", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("overrides", nargs="*", help="dotted config overrides, e.g. loss.temperature=0.05")
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    p.add_argument("--seed", type=int, help="run seed (overrides the config's 'seed')")
    p.add_argument("--checkpoint", help="checkpoint file for evaluate / export-embeddings")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--n-users", type=int, default=100, help="users sampled by export-embeddings")
    p.add_argument("--grid", help="comma-separated lambda grid for sweep-lambda")
    p.add_argument("--workers", type=int, default=1, help="parallel processes for sweep-lambda")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"out={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def _generate(cfg: RunConfig) -> dict:
    from .synthetic import generate_dp_events, generate_kt

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    syn = cfg.data.synthetic
    seqs = generate_kt(syn) if cfg.task.kind == "KT" else generate_dp_events(syn, cfg.task)
    cats = sorted({k for s in seqs for x in s.interactions for k in x.categorical_features})
    conts = sorted({k for s in seqs for x in s.interactions for k in x.continuous_features})
    has_correct = any(x.correct is not None for s in seqs for x in s.interactions)
    path = out / "data.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "item_id", "timestamp_ms", *(["correct"] if has_correct else []), *cats, *conts])
        n = 0
        for s in seqs:
            for x in s.interactions:
                row = [x.user_id, x.item_id, x.timestamp_ms]
                if has_correct:
                    row.append("" if x.correct is None else x.correct)
                row += [x.categorical_features.get(c, "") for c in cats]
                row += [repr(x.continuous_features.get(c, 0.0)) for c in conts]
                w.writerow(row)
                n += 1
    dump_config(cfg, out / "config.yaml")
    return {"command": "generate", "path": str(path), "users": len(seqs), "interactions": n}


def run(argv: list[str] | None = None) -> int:
    args = _parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("SAICL_NUM_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        summary = _dispatch(args)
    except SaiclError as exc:
        print(json.dumps({"command": args.command, "status": "error", "code": exc.code, "message": exc.message}))
        print(f"saicl: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary))
    return 0 if summary.get("status", "ok") == "ok" else 1


def _dispatch(args) -> dict:
    from . import pipeline
    from .evaluation import dataset_stats

    cmd = args.command
    if cmd in ("evaluate", "export-embeddings"):
        if not args.checkpoint:
            raise SaiclError("config_error", "--checkpoint is required")
        if not Path(args.checkpoint).exists():
            raise SaiclError("checkpoint_not_found", args.checkpoint)
        if cmd == "evaluate":
            rep = pipeline.evaluate_checkpoint(args.checkpoint, args.split)
            return {"command": cmd, "status": "ok", **rep}
        out = Path(args.out or Path(args.checkpoint).parent)
        out.mkdir(parents=True, exist_ok=True)
        res = pipeline.export_from_checkpoint(args.checkpoint, out / f"embeddings_{args.split}.csv", args.split,
                                              args.n_users, args.seed or 0)
        return {"command": cmd, "status": "ok", **res}

    cfg = _config(args)
    if cmd == "generate":
        return {"status": "ok", **_generate(cfg)}
    if cmd == "stats":
        seqs, _ = pipeline.load_sequences(cfg)
        return {"command": cmd, "status": "ok", **dataset_stats(seqs)}
    if cmd == "train":
        return pipeline.run_training(cfg)
    grid = [float(g) for g in args.grid.split(",")] if args.grid else list(cfg.train.lambda_grid)
    rows = pipeline.sweep(cfg, grid, cfg.out, args.workers)
    ok = all(r["status"] == "ok" for r in rows)
    return {"command": cmd, "status": "ok" if ok else "diverged", "out": cfg.out, "table": rows}


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
