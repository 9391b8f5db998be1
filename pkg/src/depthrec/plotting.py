"""Matplotlib rendering for heatmap reports and the supervision ablation."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

if TYPE_CHECKING:
    from .evaluate import HeatmapReport

AXIS_LABEL = {"graph": "hops", "logic": "nesting depth", "family": "chain depth"}

rc = {
    "font.size": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    # temp file in the target directory, then rename, so readers never see a partial image
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=path.suffix)
    os.close(fd)
    try:
        fig.savefig(tmp, format=path.suffix.lstrip(".") or "png")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)
    return path


def _boundary(ax, axis_values, lo, hi, vertical):
    # dashed lines sit between cells, just outside the trained span
    idx = [i for i, v in enumerate(axis_values) if lo <= v <= hi]
    if not idx:
        return
    for edge in (idx[0] - 0.5, idx[-1] + 0.5):
        if vertical:
            ax.axvline(edge, color="white", ls="--", lw=1.2)
        else:
            ax.axhline(edge, color="white", ls="--", lw=1.2)


def render_heatmap(report: "HeatmapReport", path, title: str | None = None) -> Path:
    grid = np.asarray(report.accuracy, dtype=float)  # rows: steps, cols: complexity
    with plt.rc_context(rc):
        fig, ax = plt.subplots(figsize=(0.45 * len(report.complexities) + 2.2, 0.3 * len(report.steps) + 1.6))
        im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
        ax.set_xticks(range(len(report.complexities)), [str(c) for c in report.complexities])
        ax.set_yticks(range(len(report.steps)), [str(s) for s in report.steps])
        ax.set_xlabel(AXIS_LABEL.get(report.task, "complexity"))
        ax.set_ylabel("thinking steps")
        if len(report.steps) * len(report.complexities) <= 400:
            for i in range(grid.shape[0]):
                for j in range(grid.shape[1]):
                    ax.text(j, i, f"{100 * grid[i, j]:.0f}", ha="center", va="center", fontsize=6,
                            color="black" if grid[i, j] > 0.6 else "white")
        if report.train_complexity:
            _boundary(ax, report.complexities, *report.train_complexity, vertical=True)
        if report.train_steps:
            _boundary(ax, report.steps, *report.train_steps, vertical=False)
        fig.colorbar(im, ax=ax, label="accuracy")
        ax.set_title(title or f"{report.task}: accuracy")
        return _save(fig, path)


def render_ablation(rows: list[dict], path) -> Path:
    """Grouped bars: step-1 deep-OOD accuracy and sufficient-step OOD accuracy per mode."""
    labels = [r["mode"] for r in rows]
    x = np.arange(len(rows))
    with plt.rc_context(rc):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        ax.bar(x - 0.18, [r["step1_deep_acc"] for r in rows], 0.36, label="step 1, deep OOD")
        ax.bar(x + 0.18, [r["sufficient_ood_acc"] for r in rows], 0.36, label="sufficient steps, OOD")
        ax.axhline(0.5, color="grey", ls=":", lw=1)
        ax.set_xticks(x, labels)
        ax.set_ylim(0, 1)
        ax.set_ylabel("accuracy")
        ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)
