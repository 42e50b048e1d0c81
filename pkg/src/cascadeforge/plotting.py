"""Figures written next to text/JSON reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluator import ParetoPoint, pareto_front  # noqa: E402


def pareto_figure(points: Sequence[ParetoPoint], path: str | Path, highlight: Sequence[str] = (),
                  quality_label: str = "F1") -> Path:
    """Scatter of quality vs mean time with the non-dominated staircase."""
    path = Path(path)
    front = pareto_front(points)
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    base = [p for p in points if p.name not in highlight]
    ax.scatter([p.mean_time for p in base], [p.quality for p in base], s=14, c="0.6",
               label="static ensembles")
    for p in points:
        if p.name in highlight:
            ax.scatter([p.mean_time], [p.quality], s=46, marker="*", zorder=3)
            ax.annotate(p.name, (p.mean_time, p.quality), textcoords="offset points",
                        xytext=(4, 4), fontsize=8)
    front = sorted(front, key=lambda p: (p.mean_time, -p.quality))
    ax.step([p.mean_time for p in front], [p.quality for p in front], where="post",
            c="C3", lw=1, label="non-dominated")
    ax.set_xlabel("mean time per sample (s)")
    ax.set_ylabel(quality_label)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def attack_figure(labels: Sequence[str], rates: Sequence[float], path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 0.5 + 0.35 * max(len(labels), 1)))
    ax.barh(range(len(labels)), rates, color="C0")
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.set_xlim(0, 1)
    ax.set_xlabel("attack success rate")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
