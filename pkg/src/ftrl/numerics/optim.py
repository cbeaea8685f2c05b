from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


def global_norm(grads: list[np.ndarray]) -> float:
    total = 0.0
    for g in grads:
        total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale ``grads`` so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


class Adam:
    """Adaptive-moment optimizer with bias correction.

    State is keyed by tensor identity, so a parameter that is frozen for a
    while simply keeps its moments untouched until it receives gradients
    again.
    """

    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._t: dict[int, int] = {}

    def step(self, params: list[Tensor], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            if not p.requires_grad or g is None:
                continue
            key = id(p)
            m = self._m.get(key)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
                t = 0
            else:
                v, t = self._v[key], self._t[key]
            t += 1
            m = self.b1 * m + (1.0 - self.b1) * g
            v = self.b2 * v + (1.0 - self.b2) * (g * g)
            self._m[key], self._v[key], self._t[key] = m, v, t
            if self.lr == 0.0:
                continue
            m_hat = m / (1.0 - self.b1 ** t)
            v_hat = v / (1.0 - self.b2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
