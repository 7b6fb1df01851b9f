from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
               samples: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-7) -> float:
    """Largest relative error between backprop and central differences.

    ``f`` recomputes a scalar from the current values of ``params``. With
    ``samples`` set, only that many randomly chosen entries per parameter are
    perturbed. The error of an entry is ``|a - n| / max(|a| + |n|, floor)``.
    Finite differences are meaningless across a ReLU kink, so keep
    pre-activations away from zero when choosing inputs.
    """
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if samples is not None and samples < flat.size:
            idx = rng.choice(flat.size, size=samples, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().data)
            flat[i] = orig - h
            down = float(f().data)
            flat[i] = orig
            num = (up - down) / (2 * h)
            ana = a.reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), floor))
    return worst
