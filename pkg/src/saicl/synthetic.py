"""Deterministic synthetic students.

Knowledge tracing data follows a one-parameter logistic IRT model whose
ability grows by ``learning_rate`` after every correct answer. Dropout data
draws a quit time per student from an exponential hazard and emits events on
active days before it; labels come from ``derive_dropout_labels``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DAY_MS, Interaction, StudentSequence, TaskKind
from .errors import SaiclError
from .ingest import derive_dropout_labels

BASE_TS = 1_600_000_000_000
MAX_LAG_MS = 604_800_000
MAX_ELAPSED_MS = 180_000


@dataclass
class SynthConfig:
    n_students: int = 200
    n_items: int = 50
    ability_std: float = 1.0
    difficulty_std: float = 1.0
    learning_rate: float = 0.05
    min_len: int = 20
    max_len: int = 150
    # dropout streams
    hazard: float = 0.03
    hazard_std: float = 0.0
    activity_prob: float = 0.7
    events_per_day: float = 3.0
    engagement_decay: float = 0.02
    n_actions: int = 4
    history_days: int = 30
    prediction_days: int = 7
    seed: int = 7

    def __post_init__(self):
        if self.n_students < 1 or self.n_items < 1 or self.n_actions < 1:
            raise SaiclError("config_error", "synthetic counts must be >= 1")
        if self.ability_std < 0 or self.difficulty_std < 0 or self.hazard_std < 0:
            raise SaiclError("config_error", "synthetic standard deviations must be >= 0")
        if not 1 <= self.min_len <= self.max_len:
            raise SaiclError("config_error", "need 1 <= min_len <= max_len")
        if self.hazard < 0 or not 0 <= self.activity_prob <= 1:
            raise SaiclError("config_error", "hazard must be >= 0 and activity_prob in [0, 1]")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def item_difficulties(cfg: SynthConfig) -> np.ndarray:
    return np.random.default_rng([cfg.seed, 0]).normal(0.0, cfg.difficulty_std, cfg.n_items)


def _student_rng(cfg: SynthConfig, i: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 1, i])


def generate_kt(cfg: SynthConfig, return_truth: bool = False):
    """IRT students. With ``return_truth`` also returns the true P(correct) per interaction."""
    b = item_difficulties(cfg)
    seqs, truth = [], []
    for i in range(cfg.n_students):
        rng = _student_rng(cfg, i)
        theta = rng.normal(0.0, cfg.ability_std)
        n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        ts = BASE_TS + int(rng.integers(0, DAY_MS))
        xs, ps = [], []
        for _ in range(n):
            q = int(rng.integers(cfg.n_items))
            p = float(sigmoid(theta - b[q]))
            y = int(rng.random() < p)
            xs.append(Interaction(f"u{i}", q, ts, y))
            ps.append(p)
            if y:
                theta += cfg.learning_rate
            ts += 1 + int(rng.exponential(60_000))
        seqs.append(StudentSequence(f"u{i}", tuple(xs)))
        truth.append(ps)
    return (seqs, truth) if return_truth else seqs


def generate_dp_events(cfg: SynthConfig, task: TaskKind | None = None) -> list[StudentSequence]:
    """Raw event streams covering days ``[0, t_h + t_p)`` from each student's first event.

    Day 0 is always active and its first event sits exactly at the student's
    start time, so day indices relative to the first event equal the
    generator's own day counter.
    """
    task = task or TaskKind("DP", cfg.history_days, cfg.prediction_days)
    conditional = task.kind == "CondDP"
    b = item_difficulties(cfg)
    horizon = cfg.history_days + cfg.prediction_days
    seqs = []
    for i in range(cfg.n_students):
        rng = _student_rng(cfg, i)
        hazard = cfg.hazard * math.exp(cfg.hazard_std * rng.normal() - cfg.hazard_std ** 2 / 2)
        if math.isinf(hazard):
            quit_day = 0.0
        elif hazard == 0:
            quit_day = math.inf
        else:
            quit_day = rng.exponential(1.0 / hazard)
        theta = rng.normal(0.0, cfg.ability_std)
        start = BASE_TS + int(rng.integers(0, 365)) * DAY_MS
        stamps = []
        for d in range(horizon):
            alive = d == 0 or d < quit_day
            if not alive:
                break
            if d > 0 and rng.random() >= cfg.activity_prob:
                continue
            k = 1 + int(rng.poisson(cfg.events_per_day * math.exp(-cfg.engagement_decay * d)))
            offsets = np.sort(rng.integers(0, DAY_MS, size=k))
            if d == 0:
                offsets[0] = 0
            stamps.extend(start + d * DAY_MS + int(o) for o in offsets)
        xs, prev = [], stamps[0]
        for ts in stamps:
            q = int(rng.integers(cfg.n_items))
            cats = {"action": int(rng.integers(cfg.n_actions))}
            conts = {"lag_ms": float(ts - prev)}
            correct = None
            if conditional:
                correct = int(rng.random() < sigmoid(theta - b[q]))
                conts["elapsed_ms"] = float(rng.exponential(30_000))
            xs.append(Interaction(f"u{i}", q, ts, correct, cats, conts))
            prev = ts
        seqs.append(StudentSequence(f"u{i}", tuple(xs)))
    return seqs


def generate_dp(cfg: SynthConfig, task: TaskKind | None = None) -> list[StudentSequence]:
    task = task or TaskKind("DP", cfg.history_days, cfg.prediction_days)
    return derive_dropout_labels(generate_dp_events(cfg, task), task.history_days, task.prediction_days, task)


def dropout_probability(cfg: SynthConfig) -> float:
    """Closed-form P(label = 1) for a homogeneous hazard (``hazard_std == 0``).

    With quit time T ~ Exp(hazard), day d >= 1 is alive iff d < T and alive
    days are active with ``activity_prob``. K, the number of alive days in
    the prediction window, has P(K >= k) = exp(-hazard (t_h + k - 1)).
    """
    h, a = cfg.hazard, cfg.activity_prob
    t_h, t_p = cfg.history_days, cfg.prediction_days

    def surv(k: int) -> float:
        if k <= 0:
            return 1.0
        if k > t_p:
            return 0.0
        if math.isinf(h):
            return 0.0
        return math.exp(-h * (t_h + k - 1))

    return sum((surv(k) - surv(k + 1)) * (1 - a) ** k for k in range(t_p + 1))


def synthetic_bounds() -> dict[str, list[float]]:
    return {"lag_ms": [0.0, float(MAX_LAG_MS)], "elapsed_ms": [0.0, float(MAX_ELAPSED_MS)]}
