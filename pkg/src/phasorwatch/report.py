"""Figure rendering for detection reports.

One log-scale trace per metric with detected changes and estimated start
ticks marked, truth windows shaded when available, plus a stacked
overview of all metrics.  Files are written as PNG next to the delimited
outputs.
"""
from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .storage import ensure_dir  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
})


def _slug(metric_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", metric_id).strip("_")


def _plot_series(ax, pairs, events, episodes, truth, metric_id):
    ks = [k for k, _ in pairs]
    xs = [x for _, x in pairs]
    ax.semilogy(ks, [max(x, 1e-300) for x in xs], lw=0.9, color="tab:blue")
    for ep in episodes:
        if ep.metric_id == metric_id:
            ax.axvspan(ep.start_tick, ep.end_tick, color="tab:orange", alpha=0.15)
    for ev in events:
        if ev.metric_id == metric_id:
            ax.axvline(ev.detected_at, color="tab:red", lw=0.8)
            ax.axvline(ev.estimated_start, color="tab:red", lw=0.8, ls="--", alpha=0.6)
    if truth:
        for label in truth:
            if "start_tick" in label:
                ax.axvspan(label["start_tick"], label["end_tick"],
                           color="tab:green", alpha=0.12)
    ax.set_ylabel(metric_id, rotation=0, ha="right", va="center", fontsize=8)


def render_figures(out_dir, series, events, episodes, truth=None) -> list[Path]:
    """Write one PNG per metric plus an all-metrics overview; returns paths."""
    out = ensure_dir(out_dir)
    paths = []
    for metric_id in sorted(series):
        fig, ax = plt.subplots(figsize=(8, 2.6))
        _plot_series(ax, series[metric_id], events, episodes, truth, metric_id)
        ax.set_xlabel("reporting tick")
        ax.set_title(f"{metric_id} (detections solid, estimated starts dashed)")
        fig.tight_layout()
        p = out / f"metric_{_slug(metric_id)}.png"
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)

    if series:
        n = len(series)
        fig, axes = plt.subplots(n, 1, figsize=(8, 1.6 * n + 1), sharex=True,
                                 squeeze=False)
        for ax, metric_id in zip(axes[:, 0], sorted(series)):
            _plot_series(ax, series[metric_id], events, episodes, truth, metric_id)
        axes[-1, 0].set_xlabel("reporting tick")
        fig.suptitle("anomaly metrics")
        fig.tight_layout()
        p = out / "overview.png"
        fig.savefig(p)
        plt.close(fig)
        paths.append(p)
    return paths
