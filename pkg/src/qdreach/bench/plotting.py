"""Deterministic SVG figures for repertoires and study curves.

Figures are built on a bare ``Figure`` (no pyplot state). The SVG id salt and
the date stamp are pinned, so identical inputs give byte-identical files.
"""
from __future__ import annotations

import matplotlib
from matplotlib.figure import Figure
import numpy as np

CANVAS = (6.0, 6.0)
# symmetric margins keep the axes centered on the canvas
AXES_RECT = (0.15, 0.15, 0.7, 0.7)
_RC = {"svg.hashsalt": "qdreach", "svg.fonttype": "path", "path.simplify": False}


def _save(fig: Figure, path) -> None:
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})


def coverage_svg(points, bounds, path, labels=("b0", "b1"), title="repertoire coverage") -> None:
    """Scatter of control-dim behaviors with axes fixed to ``bounds`` (2 x 2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    bounds = np.asarray(bounds, dtype=float)
    fig = Figure(figsize=CANVAS)
    ax = fig.add_axes(AXES_RECT)
    ax.scatter(pts[:, 0], pts[:, 1], s=4, c="tab:blue", linewidths=0)
    ax.set_xlim(*bounds[0])
    ax.set_ylim(*bounds[1])
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    ax.set_title(f"{title} (n={len(pts)})")
    _save(fig, path)


def curves_svg(x, series: dict, path, xlabel="generation", ylabel="", title="") -> None:
    fig = Figure(figsize=(7.0, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    for name, y in series.items():
        ax.plot(x, y, label=name, lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if series:
        ax.legend(loc="best", frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def bar_svg(categories, counts, path, title="") -> None:
    fig = Figure(figsize=(8.0, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    pos = np.arange(len(categories))
    ax.bar(pos, counts, color="tab:gray")
    ax.set_xticks(pos)
    ax.set_xticklabels(categories, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("actions")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def error_hist_svg(before, after, path, bins=20, unit="m") -> None:
    """Overlaid histograms of errors before and after adaptation."""
    before = np.asarray(before, dtype=float)
    after = np.asarray(after, dtype=float)
    both = np.concatenate([before, after])
    both = both[np.isfinite(both)]
    hi = float(both.max()) if both.size and both.max() > 0 else 1.0
    edges = np.linspace(0.0, hi, bins + 1)
    fig = Figure(figsize=(7.0, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    ax.hist(before[np.isfinite(before)], bins=edges, alpha=0.6, label="before")
    ax.hist(after[np.isfinite(after)], bins=edges, alpha=0.6, label="after")
    ax.set_xlabel(f"control error [{unit}]")
    ax.set_ylabel("count")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)
