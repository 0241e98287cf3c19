"""Self-describing checkpoint files: configs, feature schema and named parameter arrays."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path
from typing import Any

import torch

from .data import FeatureSchema
from .encoders import EncoderConfig, EncoderStack
from .errors import SaiclError

FORMAT = "saicl-checkpoint/1"


def save_checkpoint(path: str | Path, model: EncoderStack, run_config: dict | None = None,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    blob = {
        "format": FORMAT,
        "encoder_config": asdict(model.cfg),
        "schema": model.schema.to_dict(),
        "head": model.head_kind,
        "has_projections": model.has_projections,
        "dtype": str(model.start.dtype).replace("torch.", ""),
        "run_config": run_config or {},
        "meta": meta or {},
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "params": {k: v.detach().clone().cpu() for k, v in state.items()},
    }
    torch.save(blob, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[EncoderStack, dict[str, Any]]:
    """Rebuild the model; returns ``(model, blob_without_params)``."""
    path = Path(path)
    if not path.exists():
        raise SaiclError("checkpoint_not_found", str(path))
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != FORMAT:
        raise SaiclError("checkpoint_not_found", f"{path} is not a {FORMAT} file")
    cfg = EncoderConfig(**blob["encoder_config"])
    model = EncoderStack(cfg, FeatureSchema.from_dict(blob["schema"]), head=blob["head"])
    if not blob["has_projections"]:
        model.drop_projections()
    model.to(getattr(torch, blob["dtype"]))
    model.load_state_dict(blob["params"], strict=True)
    model.eval()
    info = {k: v for k, v in blob.items() if k != "params"}
    return model, info
