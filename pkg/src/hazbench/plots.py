"""Static SVG plot emission.

Estimates are drawn as solid step/line curves with dashed interval
bounds; benchmark plots show the per-replicate "cloud" with the mean
overlaid and the truth in black.  Output is deterministic (fixed SVG
hash salt, no date metadata) so reruns produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "hazbench"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import HazardCurve, TimeGrid  # noqa: E402

__all__ = ["plot_curves", "plot_cloud"]

_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown")


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _step_xy(curve: HazardCurve):
    edges = curve.grid.edges
    x = np.repeat(edges, 2)[1:-1]
    y = np.repeat(curve.values, 2)
    return x, y


def plot_curves(curves: dict[str, HazardCurve], path: str | Path, title: str = "",
                ylabel: str = "hazard") -> None:
    """One panel with labelled curves, dashed bounds where present."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, (label, curve) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        x, y = _step_xy(curve)
        ax.plot(x, y, color=color, label=label)
        if curve.lower is not None and curve.upper is not None:
            for vals in (curve.lower, curve.upper):
                ax.plot(
                    np.repeat(curve.grid.edges, 2)[1:-1],
                    np.repeat(vals, 2),
                    color=color,
                    linestyle="--",
                    linewidth=0.8,
                )
    ax.set_xlabel("time")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def plot_cloud(
    estimates: list[np.ndarray],
    grid: TimeGrid,
    truth: np.ndarray | None,
    path: str | Path,
    title: str = "",
) -> None:
    """Per-replicate estimates (light), their mean (dark), truth in black."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    mids = grid.midpoints
    for est in estimates:
        ax.plot(mids, est, color="tab:blue", alpha=0.15, linewidth=0.6)
    if estimates:
        ax.plot(mids, np.mean(estimates, axis=0), color="tab:blue", linewidth=2.0,
                label="mean estimate")
    if truth is not None:
        ax.plot(mids, truth, color="black", linewidth=2.0, label="truth")
    ax.set_xlabel("time")
    ax.set_ylabel("hazard")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)
