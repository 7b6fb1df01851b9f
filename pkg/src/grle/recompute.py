"""Recompute run metrics from the CSV files alone.

Deliberately uses nothing from the simulator: it reads ``log.csv`` (one row
per task), ``slots.csv`` (one row per slot) and the slot length from
``metrics.csv``, and redoes the arithmetic. Used to check that the reported
metrics are what the logs say.
"""
from __future__ import annotations

import csv
from pathlib import Path

CHECKED = ("ssp", "avg_accuracy", "avg_throughput", "mean_reward")


def _rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def recompute_run(run_dir: str | Path) -> dict[str, float]:
    run_dir = Path(run_dir)
    tasks = _rows(run_dir / "log.csv")
    slots = _rows(run_dir / "slots.csv")
    reported = _rows(run_dir / "metrics.csv")[0]
    slot_len = float(reported["slot_len_ms"])

    n = len(tasks)
    wins = 0
    acc = 0.0
    for row in tasks:
        if row["success"] == "1":
            wins += 1
            acc += float(row["accuracy"])
    reward = 0.0
    for row in slots:
        reward += float(row["reward"])
    return {
        "ssp": wins / n if n else 0.0,
        "avg_accuracy": acc / n if n else 0.0,
        "avg_throughput": wins / (len(slots) * slot_len),
        "mean_reward": reward / len(slots) if slots else 0.0,
    }


def compare_run(run_dir: str | Path) -> list[tuple[str, float, float]]:
    """``(metric, reported, recomputed)`` for every metric that differs."""
    reported = _rows(Path(run_dir) / "metrics.csv")[0]
    fresh = recompute_run(run_dir)
    return [(k, float(reported[k]), fresh[k]) for k in CHECKED if float(reported[k]) != fresh[k]]
