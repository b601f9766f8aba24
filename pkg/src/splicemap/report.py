"""Figure rendering for the report path (file output only, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_roc_plot(curves, path, title="Pixel-level ROC") -> None:
    """Plot one or more named ROC curves to an SVG/PNG file.

    ``curves`` is a RocCurve or a {label: RocCurve} mapping.
    """
    if not isinstance(curves, dict):
        curves = {"detector": curves}
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, curve in curves.items():
        ax.plot(curve.fpr, curve.tpr, label=f"{label} (AUC {curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], "k--", linewidth=0.8, label="chance")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def save_heatmap_figure(heatmap, path, title=None) -> None:
    """Render a heat map with a colorbar; uncovered pixels are masked out."""
    shown = np.ma.masked_where(~heatmap.coverage, heatmap.values)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(shown, cmap="inferno", interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046, label="anomaly score")
    if title:
        ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)


def save_loss_plot(losses_by_label: dict, path, title="Training loss") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, losses in losses_by_label.items():
        ax.plot(range(1, len(losses) + 1), losses, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean reconstruction error")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
