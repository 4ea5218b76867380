"""Matplotlib renderings of the diagnostic CSV payloads.

Every figure is written straight to a file (Agg backend, no display):
the per-query span scatter, the score-vs-IoU correlation fit, and the
sweep summary chart.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .evaluation import QuerySpanRecord  # noqa: E402


def render_query_scatter(records: list[QuerySpanRecord], path: str | Path) -> Path:
    """Span center vs width, one color per originating query."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 5), dpi=120)
    if records:
        queries = sorted({r.query_index for r in records})
        cmap = plt.get_cmap("tab20", max(len(queries), 1))
        for i, q in enumerate(queries):
            pts = [(r.span.center, r.span.width) for r in records if r.query_index == q]
            xs, ys = zip(*pts)
            ax.scatter(xs, ys, s=8, alpha=0.6, color=cmap(i), label=f"q{q}")
        if len(queries) <= 20:
            ax.legend(fontsize=5, ncol=2, markerscale=1.5, loc="upper right")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("moment center")
    ax.set_ylabel("moment width")
    ax.set_title("predicted spans by query")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_correlation(
    scores: list[float],
    gt_ious: list[float],
    slope: float,
    intercept: float,
    path: str | Path,
) -> Path:
    """Ranking score vs achieved IoU with the fitted regression line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 5), dpi=120)
    ax.scatter(scores, gt_ious, s=6, alpha=0.4, color="tab:blue")
    if scores:
        xs = np.linspace(min(scores), max(scores), 50)
        ax.plot(xs, slope * xs + intercept, color="tab:red",
                label=f"fit: slope={slope:.3f}")
        ax.legend(fontsize=8)
    ax.set_xlabel("ranking score")
    ax.set_ylabel("IoU with ground truth")
    ax.set_title("score vs localization quality")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_sweep(
    values: list[str], metrics: dict[str, list[float]], axis_name: str, path: str | Path
) -> Path:
    """Grouped line chart of sweep metrics across the swept values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    x = np.arange(len(values))
    for name, series in metrics.items():
        ys = [y if y == y else np.nan for y in series]  # keep NaN gaps visible
        ax.plot(x, ys, marker="o", label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(values, rotation=20)
    ax.set_xlabel(axis_name)
    ax.set_ylabel("metric value")
    ax.set_title(f"sweep over {axis_name}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
