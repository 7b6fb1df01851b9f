"""Evaluation metrics over episode logs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def ssp(outcomes: Sequence) -> float:
    """Service success probability: share of tasks finished by their deadline."""
    if not outcomes:
        return 0.0
    return sum(1 for o in outcomes if o.success) / len(outcomes)


def avg_accuracy(outcomes: Sequence) -> float:
    """Accuracy summed over successful tasks, divided by all tasks."""
    if not outcomes:
        return 0.0
    total = 0.0
    for o in outcomes:
        if o.success:
            total += o.accuracy
    return total / len(outcomes)


def avg_throughput(outcomes: Sequence, n_slots: int, slot_len_ms: float) -> float:
    """Successful tasks per millisecond of simulated time."""
    return sum(1 for o in outcomes if o.success) / (n_slots * slot_len_ms)


def sequential_mean(values: Sequence[float]) -> float:
    """Plain left-to-right mean, so a CSV recompute matches to the last bit."""
    if not values:
        return 0.0
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def normalized_reward(policy_q: float, oracle_q: float) -> float:
    # both achieved nothing
    if oracle_q <= 0:
        return 1.0
    return policy_q / oracle_q


def moving_average(trace: Sequence[float], window: int = 50) -> np.ndarray:
    """Trailing mean over the last ``min(window, available)`` entries."""
    x = np.asarray(trace, dtype=float)
    return np.array([x[max(0, i + 1 - window):i + 1].mean() for i in range(x.size)])


@dataclass
class MetricsReport:
    ssp: float
    avg_accuracy: float
    avg_throughput: float
    mean_reward: float
    normalized_reward: list[float]
    moving_average: list[float]

    @property
    def mean_q_hat(self) -> float | None:
        return float(np.mean(self.normalized_reward)) if self.normalized_reward else None
