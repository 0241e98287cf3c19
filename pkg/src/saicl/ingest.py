"""CSV ingestion, user filtering, dropout labelling, splitting and normalization."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import DAY_MS, Interaction, StudentSequence, TaskKind
from .errors import SaiclError

log = logging.getLogger(__name__)


@dataclass
class DatasetSpec:
    """Where a CSV lives and how its columns map onto interactions."""

    path: str = ""
    user_col: str = "user_id"
    item_col: str = "item_id"
    timestamp_col: str = "timestamp_ms"
    correct_col: Optional[str] = "correct"
    categorical_cols: list[str] = field(default_factory=list)
    continuous_cols: list[str] = field(default_factory=list)
    min_interactions: int = 5
    min_active_days: int = 0
    # name -> [min, max]
    bounds: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        for name, b in self.bounds.items():
            if len(b) != 2 or not b[1] > b[0]:
                raise SaiclError("config_error", f"bounds.{name}: need [min, max] with max > min, got {b}")

    @property
    def required_columns(self) -> list[str]:
        cols = [self.user_col, self.item_col, self.timestamp_col]
        if self.correct_col:
            cols.append(self.correct_col)
        return cols + list(self.categorical_cols) + list(self.continuous_cols)


def _parse_int(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        f = float(value)
        if not f.is_integer():
            raise
        return int(f)


def parse_dataset(spec: DatasetSpec, return_vocab: bool = False):
    """Read ``spec.path`` into one time-sorted ``StudentSequence`` per user.

    Item strings, and every extra categorical column, are mapped to dense
    indices in first-seen file order. With ``return_vocab`` the vocabularies
    are returned alongside as ``{column: {raw: index}}``.
    """
    path = Path(spec.path)
    if not path.exists():
        raise SaiclError("schema_error", f"dataset file not found: {path}")
    vocab: dict[str, dict[str, int]] = {"item": {}}
    for col in spec.categorical_cols:
        vocab[col] = {}
    rows: dict[str, list[tuple[int, int, Interaction]]] = {}

    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SaiclError("schema_error", f"{path}: missing header row")
        missing = [c for c in spec.required_columns if c not in reader.fieldnames]
        if missing:
            raise SaiclError("schema_error", f"{path}: missing columns {missing}")
        for order, row in enumerate(reader):
            try:
                user = row[spec.user_col]
                raw_item = row[spec.item_col]
                if user in ("", None) or raw_item in ("", None):
                    raise ValueError("empty user or item")
                item = vocab["item"].setdefault(raw_item, len(vocab["item"]))
                ts = _parse_int(row[spec.timestamp_col])
                correct = None
                if spec.correct_col and row[spec.correct_col] not in ("", None):
                    correct = _parse_int(row[spec.correct_col])
                    if correct not in (0, 1):
                        raise ValueError(f"correct must be 0/1, got {correct}")
                cats = {c: vocab[c].setdefault(row[c], len(vocab[c])) for c in spec.categorical_cols}
                conts = {}
                for c in spec.continuous_cols:
                    v = float(row[c])
                    if not math.isfinite(v):
                        raise ValueError(f"non-finite {c}")
                    conts[c] = v
            except (ValueError, TypeError, KeyError) as exc:
                raise SaiclError("row_error", f"{path}: line {reader.line_num}: {exc}") from None
            x = Interaction(user, item, ts, correct, cats, conts)
            rows.setdefault(user, []).append((ts, order, x))

    seqs = []
    for user, items in rows.items():
        items.sort(key=lambda r: (r[0], r[1]))
        seqs.append(StudentSequence(user, tuple(r[2] for r in items)))
    if return_vocab:
        return seqs, vocab
    return seqs


def active_days(seq: StudentSequence) -> int:
    return len({x.timestamp_ms // DAY_MS for x in seq.interactions})


def filter_users(seqs: Sequence[StudentSequence], min_interactions: int = 0, min_active_days: int = 0) -> list[StudentSequence]:
    return [s for s in seqs if len(s) >= min_interactions and (min_active_days <= 0 or active_days(s) >= min_active_days)]


def derive_dropout_labels(seqs: Sequence[StudentSequence], t_h_days: int, t_p_days: int, task: TaskKind) -> list[StudentSequence]:
    """Truncate to the history window and label dropout.

    Days are counted from each user's first event. The label is 1 when the
    user has no event in days ``[t_h, t_h + t_p)``.
    """
    if t_h_days <= 0 or t_p_days <= 0:
        raise SaiclError("config_error", "t_h and t_p must be positive")
    out = []
    for seq in seqs:
        first = seq.interactions[0].timestamp_ms
        days = [(x.timestamp_ms - first) // DAY_MS for x in seq.interactions]
        history = tuple(x for x, d in zip(seq.interactions, days) if d < t_h_days)
        if not history:
            log.warning("user %s has no events inside the history window; dropped", seq.user_id)
            continue
        later = [(x, d) for x, d in zip(seq.interactions, days) if d >= t_h_days]
        label = 0 if any(d < t_h_days + t_p_days for _, d in later) else 1
        next_item = later[0][0].item_id if task.kind == "CondDP" and label == 0 else None
        out.append(StudentSequence(seq.user_id, history, sequence_label=label, next_item=next_item))
    return out


def split_users(seqs: Sequence[StudentSequence], ratios=(0.72, 0.08, 0.20), seed: int = 0):
    """User-level random (train, valid, test) partition."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise SaiclError("config_error", f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(seqs)
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(n, int(round(ratios[0] * n)))
    n_valid = min(n - n_train, int(round(ratios[1] * n)))
    pick = lambda idx: [seqs[i] for i in idx]  # noqa: E731
    return pick(order[:n_train]), pick(order[n_train:n_train + n_valid]), pick(order[n_train + n_valid:])


def normalize_value(v: float, lo: float, hi: float) -> float:
    return min(1.0, max(0.0, (v - lo) / (hi - lo)))


def normalize_continuous(seqs: Sequence[StudentSequence], spec: DatasetSpec) -> list[StudentSequence]:
    """Min-max scale every continuous feature into [0, 1], clipping outside the bounds."""
    out = []
    for seq in seqs:
        xs = []
        for x in seq.interactions:
            conts = {}
            for name, v in x.continuous_features.items():
                if name not in spec.bounds:
                    raise SaiclError("config_error", f"no normalization bounds for continuous feature {name!r}")
                lo, hi = spec.bounds[name]
                conts[name] = normalize_value(v, lo, hi)
            xs.append(replace(x, continuous_features=conts))
        out.append(replace(seq, interactions=tuple(xs)))
    return out


def load_dataset(spec: DatasetSpec, task: TaskKind) -> list[StudentSequence]:
    """parse -> filter -> dropout labels (DP/CondDP) -> normalize."""
    seqs = parse_dataset(spec)
    seqs = filter_users(seqs, spec.min_interactions, spec.min_active_days)
    if task.kind != "KT":
        seqs = derive_dropout_labels(seqs, task.history_days, task.prediction_days, task)
    if spec.continuous_cols:
        seqs = normalize_continuous(seqs, spec)
    return seqs
