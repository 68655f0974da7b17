"""Parameter updates: plain/momentum SGD with decay on GAT projections, and Adam."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .layers import Parameter

DECAYED_GROUPS = frozenset({"gat_projection"})


def sgd_step(params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray], lr: float,
             weight_decay: float = 0.0, momentum: float = 0.0,
             velocity: dict[str, np.ndarray] | None = None) -> None:
    """In place: p <- p - lr * (g + wd * p), with wd applied to GAT projections only.

    With ``momentum > 0`` the bracketed term is accumulated in ``velocity``.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=float)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        step = g + weight_decay * p.data if getattr(p, "group", None) in DECAYED_GROUPS else g
        if momentum:
            if velocity is None:
                raise ValueError("momentum needs a velocity buffer")
            v = velocity.get(name)
            v = step.copy() if v is None else momentum * v + step
            velocity[name] = v
            step = v
        p.data = p.data - lr * step


class Adam:
    """Adam with the same decoupled-from-dense decay rule as ``sgd_step``."""

    def __init__(self, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if getattr(p, "group", None) in DECAYED_GROUPS:
                g = g + self.weight_decay * p.data
            m = self.m.get(name, np.zeros_like(g)) * b1 + (1 - b1) * g
            v = self.v.get(name, np.zeros_like(g)) * b2 + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class Sgd:
    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray]) -> None:
        sgd_step(params, grads, self.lr, self.weight_decay, self.momentum, self.velocity)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total
