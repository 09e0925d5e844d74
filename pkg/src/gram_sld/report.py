"""Run reporting: the per-iteration metrics table and its figures.

The report directory gets a delimited metrics.csv plus rendered PNG
figures next to it: the mAP curve over iterations, the gram-difference
heat map when the detector exposes features, the object-size histogram
of the final labeled pool, and (for mode comparisons) a bar chart of the
three training strategies.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

METRIC_COLUMNS = (
    "iteration",
    "n_labeled",
    "added",
    "remaining",
    "precision",
    "recall",
    "loss_d1",
    "loss_d2",
    "gram_loss",
    "alpha",
    "total_loss",
    "map_d1",
    "map_d2",
    "headline_map",
)


def write_metrics_csv(history: Sequence[Mapping], path: str | Path) -> Path:
    """One row per training iteration, fixed column order, blanks for gaps."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in history:
            writer.writerow(
                ["" if row.get(c) is None else row.get(c, "") for c in METRIC_COLUMNS]
            )
    return path


def plot_map_curve(history: Sequence[Mapping], path: str | Path) -> Optional[Path]:
    iters = [r["iteration"] for r in history if r.get("headline_map") is not None]
    if not iters:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label, style in (
        ("map_d1", "detector 1", "o--"),
        ("map_d2", "detector 2", "s--"),
        ("headline_map", "better head", "k-"),
    ):
        values = [r.get(key) for r in history if r.get("headline_map") is not None]
        if any(v is not None for v in values):
            ax.plot(iters, values, style, label=label, linewidth=1.5, markersize=4)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mAP")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_gram_diff(matrix: np.ndarray, path: str | Path) -> Path:
    """Heat map of the entrywise |G1 - G2| between the two heads."""
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, cmap="magma")
    ax.set_xlabel("channel")
    ax.set_ylabel("channel")
    fig.colorbar(im, ax=ax, label="|G1 - G2|")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_size_distribution(stats: Mapping, path: str | Path) -> Path:
    """Grouped bars of small/normal/big box counts per class."""
    per_class = stats.get("per_class", {})
    classes = sorted(per_class)
    buckets = ("small", "normal", "big")
    x = np.arange(max(len(classes), 1), dtype=np.float64)
    width = 0.25
    fig, ax = plt.subplots(figsize=(max(6, len(classes) * 1.2), 4))
    for i, bucket in enumerate(buckets):
        counts = [per_class[c][bucket] for c in classes]
        ax.bar(x + (i - 1) * width, counts, width, label=bucket)
    ax.set_xticks(x)
    ax.set_xticklabels(classes, rotation=30, ha="right")
    ax.set_ylabel("boxes")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_mode_comparison(mode_maps: Mapping[str, float], path: str | Path) -> Path:
    """Bar chart of final mAP per training strategy."""
    names = list(mode_maps)
    values = [mode_maps[n] for n in names]
    fig, ax = plt.subplots(figsize=(5, 4))
    bars = ax.bar(names, values, color=["#888888", "#2a6fbb", "#44aa66"][: len(names)])
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v + 0.01, f"{v:.3f}", ha="center")
    ax.set_ylabel("mAP")
    ax.set_ylim(0.0, 1.1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_run_report(
    out_dir: str | Path,
    history: Sequence[Mapping],
    gram_matrix: Optional[np.ndarray] = None,
    size_stats: Optional[Mapping] = None,
) -> list[Path]:
    """Write metrics.csv and every figure the run's data supports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_metrics_csv(history, out / "metrics.csv")]
    curve = plot_map_curve(history, out / "map_curve.png")
    if curve is not None:
        paths.append(curve)
    if gram_matrix is not None:
        paths.append(plot_gram_diff(gram_matrix, out / "gram_diff.png"))
    if size_stats is not None:
        paths.append(plot_size_distribution(size_stats, out / "size_distribution.png"))
    return paths
