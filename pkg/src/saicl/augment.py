"""Stochastic sequence augmentations for the sample-level contrastive baselines.

Applied in a fixed order: crop, mask, replace, permute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import StudentSequence
from .errors import SaiclError


@dataclass
class AugmentConfig:
    gamma_mask: float = 0.0
    gamma_crop: float = 0.0
    gamma_replace: float = 0.0
    gamma_permute: float = 0.0
    seed: int = 0
    # also feed augmented views to interaction-level objectives (ablation only)
    apply_to_interaction: bool = False

    def __post_init__(self):
        for name in ("gamma_mask", "gamma_crop", "gamma_replace", "gamma_permute"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SaiclError("config_error", f"aug.{name} must be in [0, 1], got {v}")

    @property
    def is_identity(self) -> bool:
        return not (self.gamma_mask or self.gamma_crop or self.gamma_replace or self.gamma_permute)


def augment(seq: StudentSequence, cfg: AugmentConfig, rng: np.random.Generator, num_items: int | None = None) -> StudentSequence:
    """One random view of ``seq``. Item replacement draws from ``[0, num_items)``."""
    xs = list(seq.interactions)
    n = len(xs)

    if cfg.gamma_crop > 0:
        keep = max(1, math.floor(n * (1.0 - cfg.gamma_crop) + 0.5))
        start = int(rng.integers(0, n - keep + 1))
        xs = xs[start:start + keep]
        n = keep

    if cfg.gamma_mask > 0:
        hit = rng.random(n) < cfg.gamma_mask
        xs = [replace(x, masked=True) if h else x for x, h in zip(xs, hit)]

    if cfg.gamma_replace > 0:
        if num_items is None:
            num_items = max(x.item_id for x in seq.interactions) + 1
        hit = rng.random(n) < cfg.gamma_replace
        new_items = rng.integers(0, num_items, size=n)
        xs = [replace(x, item_id=int(q)) if h else x for x, h, q in zip(xs, hit, new_items)]

    if cfg.gamma_permute > 0 and n > 1:
        k = min(n, math.ceil(cfg.gamma_permute * n))
        start = int(rng.integers(0, n - k + 1))
        order = rng.permutation(k)
        segment = xs[start:start + k]
        # contents move, timestamps stay in their slots so the sequence stays time-ordered
        xs[start:start + k] = [replace(segment[j], timestamp_ms=segment[i].timestamp_ms) for i, j in enumerate(order)]

    return replace(seq, interactions=tuple(xs))


def two_views(seq: StudentSequence, cfg: AugmentConfig, rng: np.random.Generator, num_items: int | None = None):
    return augment(seq, cfg, rng, num_items), augment(seq, cfg, rng, num_items)
