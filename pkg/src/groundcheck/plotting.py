"""Figures written next to the tabular reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRIC_LABELS = {"cgr": "CGR", "ccr": "CCR", "psr": "PSR", "scr": "SCR", "eur": "EUR"}
# no timestamps or version strings, so reruns give identical files
_PNG_METADATA = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_variant_metrics(by_variant: Mapping[str, Mapping], path: str | Path, title: str | None = None) -> Path:
    """Grouped bars: one group per metric, one bar per prompt variant."""
    metrics = list(METRIC_LABELS)
    variants = list(by_variant)
    fig, ax = plt.subplots(figsize=(7, 3.8))
    width = 0.8 / max(len(variants), 1)
    for i, variant in enumerate(variants):
        agg = by_variant[variant]
        heights = [agg.get(m) if agg.get(m) is not None else 0.0 for m in metrics]
        xs = [j + (i - (len(variants) - 1) / 2) * width for j in range(len(metrics))]
        bars = ax.bar(xs, heights, width, label=variant)
        for bar, m in zip(bars, metrics):
            if agg.get(m) is None:
                ax.annotate("n/a", (bar.get_x() + bar.get_width() / 2, 0.02), ha="center", fontsize=7)
    ax.set_xticks(range(len(metrics)))
    ax.set_xticklabels([METRIC_LABELS[m] for m in metrics])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("rate")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_ablation(rows: Sequence[Mapping], path: str | Path) -> Path:
    """CCR / SCR / EUR against the number of retrieved evidences."""
    rows = sorted(rows, key=lambda r: r["evidences"])
    xs = [r["evidences"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key in ("ccr", "scr", "eur"):
        ys = [r[key] if r[key] is not None else float("nan") for r in rows]
        ax.plot(xs, ys, marker="o", label=METRIC_LABELS[key])
    ax.set_xlabel("# of evidences")
    ax.set_ylabel("rate")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
