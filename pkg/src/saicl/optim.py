"""Rectified Adam with decoupled weight decay."""

from __future__ import annotations

import math
from typing import Iterable

import torch

from .errors import SaiclError


def rectification(step: int, beta2: float) -> tuple[float, float | None]:
    """Return ``(rho_t, r_t)``; ``r_t`` is None while the variance is intractable (rho_t <= 4)."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2 ** step
    rho_t = rho_inf - 2.0 * step * b2t / (1.0 - b2t)
    if rho_t <= 4.0:
        return rho_t, None
    r_t = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
    return rho_t, r_t


@torch.no_grad()
def radam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor | None], state: dict[str, dict],
               lr: float, weight_decay: float, step_index: int,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """Update ``params`` in place; ``step_index`` counts from 1.

    Parameters whose gradient is None are skipped and keep their moments.
    """
    beta1, beta2 = betas
    for name, g in grads.items():
        if g is not None and not bool(torch.isfinite(g).all()):
            raise SaiclError("nan_grad", f"non-finite gradient for parameter {name!r}")
    _, r_t = rectification(step_index, beta2)
    bc1 = 1.0 - beta1 ** step_index
    bc2 = 1.0 - beta2 ** step_index
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        st = state.setdefault(name, {})
        if not st:
            st["exp_avg"] = torch.zeros_like(p)
            st["exp_avg_sq"] = torch.zeros_like(p)
        m, v = st["exp_avg"], st["exp_avg_sq"]
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        if weight_decay:
            p.mul_(1.0 - lr * weight_decay)
        if r_t is None:
            p.add_(m, alpha=-lr / bc1)
        else:
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr * r_t / bc1)


class RAdam:
    """Minimal optimizer object over named parameters, driving ``radam_step``."""

    def __init__(self, named_params: Iterable[tuple[str, torch.nn.Parameter]], lr: float = 1e-3,
                 weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = {n: p for n, p in named_params if p.requires_grad}
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, tuple(betas), eps
        self.state: dict[str, dict] = {}
        self.step_index = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_index += 1
        grads = {n: p.grad for n, p in self.params.items()}
        radam_step(self.params, grads, self.state, self.lr, self.weight_decay, self.step_index, self.betas, self.eps)
