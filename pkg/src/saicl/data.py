"""Canonical interaction, sequence and batch types shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import SaiclError

TASK_KINDS = ("KT", "DP", "CondDP")
DAY_MS = 86_400_000
NO_LABEL = -1


@dataclass(frozen=True, slots=True)
class Interaction:
    user_id: str
    item_id: int
    timestamp_ms: int
    correct: Optional[int] = None
    categorical_features: Mapping[str, int] = field(default_factory=dict)
    continuous_features: Mapping[str, float] = field(default_factory=dict)
    # set by augmentation: every feature of this position reads as the mask index
    masked: bool = False

    def __post_init__(self):
        if self.item_id < 0:
            raise SaiclError("schema_error", f"negative item index {self.item_id}")
        if self.correct is not None and self.correct not in (0, 1):
            raise SaiclError("schema_error", f"correct must be 0/1, got {self.correct!r}")
        for name, value in self.continuous_features.items():
            if not math.isfinite(value):
                raise SaiclError("schema_error", f"non-finite continuous feature {name}={value}")


@dataclass(frozen=True, slots=True)
class StudentSequence:
    user_id: str
    interactions: tuple[Interaction, ...]
    sequence_label: Optional[int] = None
    # first item after the history window (conditional dropout only)
    next_item: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.interactions, tuple):
            object.__setattr__(self, "interactions", tuple(self.interactions))
        if len(self.interactions) < 1:
            raise SaiclError("schema_error", f"user {self.user_id} has an empty sequence")
        ts = [x.timestamp_ms for x in self.interactions]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise SaiclError("schema_error", f"user {self.user_id}: timestamps not sorted")

    def __len__(self) -> int:
        return len(self.interactions)


@dataclass(frozen=True)
class TaskKind:
    kind: str = "KT"
    history_days: int = 30
    prediction_days: int = 7

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise SaiclError("config_error", f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.kind != "KT" and (self.history_days <= 0 or self.prediction_days <= 0):
            raise SaiclError("config_error", "history_days and prediction_days must be > 0")

    @property
    def is_sequence_level(self) -> bool:
        return self.kind == "DP"

    @property
    def is_next_step(self) -> bool:
        """KT and CondDP predict the interaction at t from positions before t."""
        return self.kind != "DP"


@dataclass(frozen=True)
class FeatureSchema:
    """Feature names and cardinalities. Index ``card`` is padding, ``card + 1`` masking."""

    categorical: Mapping[str, int]
    continuous: tuple[str, ...] = ()

    def __post_init__(self):
        if "item" not in self.categorical:
            raise SaiclError("schema_error", "schema needs an 'item' feature")
        object.__setattr__(self, "categorical", dict(self.categorical))
        object.__setattr__(self, "continuous", tuple(self.continuous))

    @property
    def num_items(self) -> int:
        return self.categorical["item"]

    def pad_index(self, name: str) -> int:
        return self.categorical[name]

    def mask_index(self, name: str) -> int:
        return self.categorical[name] + 1

    @classmethod
    def infer(cls, sequences: Iterable[StudentSequence], task: TaskKind, num_items: int | None = None) -> "FeatureSchema":
        cards: dict[str, int] = {"item": 0}
        cont: list[str] = []
        has_correct = False
        for seq in sequences:
            for x in seq.interactions:
                cards["item"] = max(cards["item"], x.item_id + 1)
                has_correct |= x.correct is not None
                for name, idx in x.categorical_features.items():
                    cards[name] = max(cards.get(name, 0), idx + 1)
                for name in x.continuous_features:
                    if name not in cont:
                        cont.append(name)
        if num_items is not None:
            cards["item"] = max(cards["item"], num_items)
        if has_correct and task.kind != "DP":
            cards["correct"] = 2
        return cls(categorical=cards, continuous=tuple(sorted(cont)))

    def to_dict(self) -> dict:
        return {"categorical": dict(self.categorical), "continuous": list(self.continuous)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSchema":
        return cls(categorical=dict(d["categorical"]), continuous=tuple(d.get("continuous", ())))


@dataclass(frozen=True)
class SequenceBatch:
    """B sequences by L positions.

    Position ``t`` holds the interaction predicted at ``t``; next-step models
    read it only through the shifted input (see ``EncoderStack``).
    """

    cat: Mapping[str, np.ndarray]
    cont: Mapping[str, np.ndarray]
    valid_mask: np.ndarray
    anchor_label: np.ndarray
    anchor_item: np.ndarray
    sequence_label: np.ndarray
    user_index: np.ndarray
    user_ids: tuple[str, ...]
    offsets: np.ndarray
    task: TaskKind

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid_mask.shape

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.valid_mask & (self.anchor_label != NO_LABEL)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def crop_window(n: int, L: int, rng: np.random.Generator | None, mode: str = "random") -> int:
    """Start offset of the length-``L`` window for a sequence of length ``n``."""
    if n <= L:
        return 0
    if mode == "last":
        return n - L
    if mode == "first":
        return 0
    return int(rng.integers(0, n - L + 1))


def build_batch(
    sequences: Sequence[StudentSequence],
    L: int,
    task: TaskKind,
    rng_seed: int = 0,
    schema: FeatureSchema | None = None,
    crop: str = "random",
    offsets: Sequence[int] | None = None,
) -> SequenceBatch:
    """Crop or end-pad every sequence to ``L`` positions.

    ``offsets`` overrides the crop start per sequence (used by the sliding
    evaluation windows); windows are then truncated at the sequence end.
    """
    if L < 1:
        raise SaiclError("config_error", f"L must be >= 1, got {L}")
    if not sequences:
        raise SaiclError("empty_batch", "build_batch got no sequences")
    if schema is None:
        schema = FeatureSchema.infer(sequences, task)
    B = len(sequences)
    rng = np.random.default_rng(rng_seed)

    cat = {name: np.full((B, L), schema.pad_index(name), dtype=np.int64) for name in schema.categorical}
    cont = {name: np.zeros((B, L), dtype=np.float64) for name in schema.continuous}
    valid = np.zeros((B, L), dtype=bool)
    label = np.full((B, L), NO_LABEL, dtype=np.int64)
    item = np.full((B, L), NO_LABEL, dtype=np.int64)
    seq_label = np.full(B, NO_LABEL, dtype=np.int64)
    starts = np.zeros(B, dtype=np.int64)

    for b, seq in enumerate(sequences):
        n = len(seq)
        start = crop_window(n, L, rng, crop) if offsets is None else int(offsets[b])
        window = seq.interactions[start:start + L]
        starts[b] = start
        if seq.sequence_label is not None:
            seq_label[b] = seq.sequence_label
        for t, x in enumerate(window):
            if x.item_id >= schema.num_items:
                raise SaiclError("embedding_oob", f"item {x.item_id} >= Q={schema.num_items}")
            valid[b, t] = True
            item[b, t] = x.item_id
            if task.kind == "KT":
                if x.correct is not None:
                    label[b, t] = x.correct
            elif seq.sequence_label is not None:
                label[b, t] = seq.sequence_label
            if x.masked:
                for name in schema.categorical:
                    cat[name][b, t] = schema.mask_index(name)
                continue
            cat["item"][b, t] = x.item_id
            for name in schema.categorical:
                if name == "item":
                    continue
                if name == "correct":
                    v = x.correct if x.correct is not None else x.categorical_features.get("correct")
                else:
                    v = x.categorical_features.get(name)
                if v is not None:
                    cat[name][b, t] = v
            for name in schema.continuous:
                cont[name][b, t] = x.continuous_features.get(name, 0.0)

    return SequenceBatch(
        cat={k: _freeze(v) for k, v in cat.items()},
        cont={k: _freeze(v) for k, v in cont.items()},
        valid_mask=_freeze(valid),
        anchor_label=_freeze(label),
        anchor_item=_freeze(item),
        sequence_label=_freeze(seq_label),
        user_index=_freeze(np.arange(B, dtype=np.int64)),
        user_ids=tuple(s.user_id for s in sequences),
        offsets=_freeze(starts),
        task=task,
    )
