"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Moments:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, p: np.ndarray) -> "Moments":
        return cls(np.zeros_like(p), np.zeros_like(p))


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    moments: dict[str, Moments],
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    decay: set[str] | None = None,
) -> None:
    """Update ``params`` and ``moments`` in place.

    ``decay`` restricts weight decay to the named parameters (all if None).
    A parameter whose gradient is missing is left untouched.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    b1, b2 = betas
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        state = moments.setdefault(name, Moments.zeros_like(p))
        state.step += 1
        state.m *= b1
        state.m += (1.0 - b1) * g
        state.v *= b2
        state.v += (1.0 - b2) * (g * g)
        if weight_decay and (decay is None or name in decay):
            p *= 1.0 - lr * weight_decay
        m_hat = state.m / (1.0 - b1 ** state.step)
        v_hat = state.v / (1.0 - b2 ** state.step)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)


def cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    decay_steps = total_steps - warmup_steps
    if decay_steps <= 0:
        return base_lr
    progress = (step - warmup_steps) / decay_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamW:
    """Stateful wrapper keyed by parameter name."""

    lr: float = 1e-3
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    moments: dict[str, Moments] = field(default_factory=dict)

    def step(self, named_params, lr: float | None = None, decay: set[str] | None = None) -> None:
        params = {n: p.data for n, p in named_params.items() if p.requires_grad}
        grads = {n: p.grad for n, p in named_params.items() if p.requires_grad and p.grad is not None}
        adamw_step(params, grads, self.moments, self.lr if lr is None else lr,
                   self.weight_decay, self.betas, self.eps, decay)
