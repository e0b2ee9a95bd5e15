"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState, t: int,
               lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 1e-4) -> dict[str, np.ndarray]:
    """One AdamW update (``t`` counts from 1). Returns the new parameter arrays."""
    if t < 1:
        raise ValueError("step counter t must be >= 1")
    b1, b2 = betas
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out[name] = p * (1 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
    state.t = t
    return out


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    if total <= 1:
        return lr_max
    frac = min(max(step / (total - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * frac))


class AdamW:
    """Convenience wrapper updating a module's ``Var`` parameters in place."""

    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        self.params = dict(named_params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.state = OptimState()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None):
        t = self.state.t + 1
        arrays = {k: v.data for k, v in self.params.items()}
        grads = {k: v.grad for k, v in self.params.items() if v.grad is not None}
        new = adamw_step(arrays, grads, self.state, t, self.lr if lr is None else lr,
                         self.betas, self.eps, self.weight_decay)
        for k, v in self.params.items():
            v.data = new[k]
