"""Figures written next to CLI reports (loss curves, metric histograms, image grids)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset import to_pixels  # noqa: E402

STYLE = {
    "font.size": 8,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.0,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_losses(records: Sequence[dict], path) -> Path:
    """Per-step losses from the JSONL training log, with epoch boundaries marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        x = np.arange(1, len(records) + 1)
        for key, label in (("loss_rf", "real/fake D"), ("loss_da", "domain D"), ("loss_c", "converter")):
            ys = [r.get(key) for r in records]
            if any(y is not None for y in ys):
                ax.plot(x, [np.nan if y is None else y for y in ys], label=label)
        epochs = [r["epoch"] for r in records]
        for i in range(1, len(epochs)):
            if epochs[i] != epochs[i - 1]:
                ax.axvline(i + 0.5, color="0.85", lw=0.6, zorder=0)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_metric_histograms(rmse: Sequence[float], c_ssim: Sequence[float], path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(6.0, 2.6))
        for ax, vals, label in zip(axes, (rmse, c_ssim), ("RMSE", "C-SSIM")):
            ax.hist(vals, bins=20, color="#2b8cbe")
            ax.axvline(float(np.mean(vals)), color="k", lw=0.8, ls="--")
            ax.set_xlabel(label)
        axes[0].set_ylabel("images")
        return _save(fig, path)


def image_grid(columns: Sequence[np.ndarray], path, titles: Sequence[str] = ("source", "generated", "target")) -> Path:
    """Rows of images; ``columns`` holds one N x 3 x H x W array in [-1, 1] per column."""
    n = len(columns[0])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(n, len(columns), figsize=(1.1 * len(columns), 1.1 * n), squeeze=False)
        for j, col in enumerate(columns):
            for i in range(n):
                ax = axes[i, j]
                ax.imshow(to_pixels(col[i]), interpolation="nearest")
                ax.set_xticks([])
                ax.set_yticks([])
            if j < len(titles):
                axes[0, j].set_title(titles[j])
        return _save(fig, path)
