"""Binary cross-entropy over edge scores and the Adam optimiser."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Tensor, add, clip, log, mean, mul, neg

LOG_FLOOR = 1e-12


def bce_loss(scores: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy over every edge of the batch.

    Log arguments are clamped at 1e-12.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size == 0:
        raise ValueError("empty batch")
    if targets.shape != scores.shape:
        raise ValueError(f"targets {targets.shape} vs scores {scores.shape}")
    pos = mul(targets, log(clip(scores, LOG_FLOOR, 1.0)))
    neg_part = mul(1.0 - targets, log(clip(add(1.0, neg(scores)), LOG_FLOOR, 1.0)))
    return neg(mean(add(pos, neg_part)))


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out
