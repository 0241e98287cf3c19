"""Run configuration: nested dataclasses loaded from YAML with dotted-path overrides."""

from __future__ import annotations

import copy
import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .augment import AugmentConfig
from .data import TaskKind
from .encoders import EncoderConfig
from .errors import SaiclError
from .ingest import DatasetSpec
from .losses import LossConfig
from .synthetic import SynthConfig

TRAIN_MODES = ("ce_only", "pretrain_finetune", "multitask")
OBJECTIVES = ("self", "sup", "concat_self", "concat_sup")
DEFAULT_BACKBONE = {"KT": "lstm_kt", "DP": "saedp_dp", "CondDP": "causal_tx_conddp"}


@dataclass
class TrainConfig:
    mode: str = "ce_only"
    objective: str = "self"
    epochs: int = 20
    pretrain_epochs: Optional[int] = None
    batch_size_pretrain: int = 64
    batch_size_main: int = 128
    eval_batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay_main: float = 1e-6
    weight_decay_pretrain: float = 1e-6
    lambda_grid: list[float] = field(default_factory=lambda: [0.001, 0.01, 0.1, 1.0])
    patience: int = 10
    seed: Optional[int] = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise SaiclError("config_error", f"train.mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.objective not in OBJECTIVES:
            raise SaiclError("config_error", f"train.objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if min(self.batch_size_pretrain, self.batch_size_main, self.eval_batch_size) < 1:
            raise SaiclError("config_error", "train batch sizes must be >= 1")
        if self.weight_decay_main < 0 or self.weight_decay_pretrain < 0:
            raise SaiclError("config_error", "train weight decay must be >= 0")
        if self.epochs < 1 or (self.pretrain_epochs is not None and self.pretrain_epochs < 1):
            raise SaiclError("config_error", "train epochs must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise SaiclError("config_error", "train.dtype must be float32 or float64")

    @property
    def uses_contrastive(self) -> bool:
        return self.mode != "ce_only"


@dataclass
class DataConfig:
    source: str = "synthetic"
    synthetic: SynthConfig = field(default_factory=SynthConfig)
    csv: DatasetSpec = field(default_factory=DatasetSpec)
    split: list[float] = field(default_factory=lambda: [0.72, 0.08, 0.20])

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise SaiclError("config_error", f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and not Path(self.csv.path).is_file():
            raise SaiclError("config_error", f"data.csv.path: file not found: {self.csv.path!r}")


@dataclass
class RunConfig:
    seed: int = 7
    out: str = "runs/default"
    task: TaskKind = field(default_factory=TaskKind)
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    aug: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.task.kind == "DP" and self.encoder.backbone != "saedp_dp":
            raise SaiclError("config_error", "encoder.backbone: DP uses the sequence-level saedp_dp backbone")
        if self.task.kind != "DP" and self.encoder.backbone == "saedp_dp":
            raise SaiclError("config_error", f"encoder.backbone: {self.task.kind} needs a causal backbone")
        if self.task.kind != "DP" and self.train.objective == "concat_sup":
            raise SaiclError("config_error", "train.objective: concat_sup needs sequence labels (DP only)")

    @property
    def train_seed(self) -> int:
        return self.seed if self.train.seed is None else self.train.seed


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _coerce(value: Any, tp, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if _is_dataclass_type(tp):
        return from_dict(tp, value, path)
    if tp is Any:
        return value
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise SaiclError("config_error", f"{path}: expected a list, got {value!r}")
        return [_coerce(v, args[0] if args else Any, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise SaiclError("config_error", f"{path}: expected a mapping, got {value!r}")
        vt = args[1] if args else Any
        return {str(k): _coerce(v, vt, f"{path}.{k}") for k, v in value.items()}
    if tp is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise SaiclError("config_error", f"{path}: expected a boolean, got {value!r}")
    if tp is int:
        if isinstance(value, bool):
            raise SaiclError("config_error", f"{path}: expected an integer, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
        raise SaiclError("config_error", f"{path}: expected an integer, got {value!r}")
    if tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise SaiclError("config_error", f"{path}: expected a number, got {value!r}")
    if tp is str:
        if not isinstance(value, str):
            raise SaiclError("config_error", f"{path}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: Any, path: str = ""):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys with their dotted path."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SaiclError("config_error", f"{path or '<root>'}: expected a mapping, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise SaiclError("config_error", f"unknown field(s): {', '.join(where + u for u in unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except SaiclError as exc:
        if path and not exc.message.startswith(path):
            raise SaiclError(exc.code, f"{path}: {exc.message}") from None
        raise


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _parse_scalar(text: str):
    return yaml.safe_load(text)


# short spellings accepted on the command line
ALIASES = {"loss.tau": "loss.temperature"}


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides (values parsed as YAML scalars) to a raw config mapping."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise SaiclError("config_error", f"override {item!r} is not of the form key.path=value")
        key, text = item.split("=", 1)
        key = ALIASES.get(key.strip(), key.strip())
        parts = key.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise SaiclError("config_error", f"override {key}: {p} is not a section")
        node[parts[-1]] = _parse_scalar(text)
    return raw


def resolve(raw: dict) -> RunConfig:
    """Fill backbone defaults from the task, then validate."""
    raw = copy.deepcopy(raw or {})
    kind = (raw.get("task") or {}).get("kind", "KT")
    enc = raw.setdefault("encoder", {}) or {}
    raw["encoder"] = enc
    enc.setdefault("backbone", DEFAULT_BACKBONE.get(kind, "lstm_kt"))
    return from_dict(RunConfig, raw)


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise SaiclError("config_error", f"config file not found: {p}")
        raw = yaml.safe_load(p.read_text()) or {}
        if not isinstance(raw, dict):
            raise SaiclError("config_error", f"{p}: top level must be a mapping")
    return resolve(apply_overrides(raw, overrides or []))


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
