"""Static SVG figures for run, sweep and oracle-compare outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp, so the same data gives the same file
plt.rcParams["svg.hashsalt"] = "grle"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_traces(path: str | Path, traces: Mapping[str, Sequence[float]], *, ylabel: str,
                title: str = "", xlabel: str = "time slot", hline: float | None = None) -> Path:
    """One line per named trace against slot index (1-based)."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, y in traces.items():
        ax.plot(range(1, len(y) + 1), y, linewidth=1.2, label=label)
    if hline is not None:
        ax.axhline(hline, color="grey", linestyle="--", linewidth=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.25)
    if len(traces) > 1:
        ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_vs_devices(path: str | Path, series: Mapping[str, tuple[Sequence[int], Sequence[float]]],
                    *, ylabel: str, title: str = "") -> Path:
    """Metric against number of devices, one marked line per policy."""
    fig, ax = plt.subplots(figsize=(5.6, 4.0))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", linewidth=1.5, label=label)
    ax.set_xlabel("number of IoT devices")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.25)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
