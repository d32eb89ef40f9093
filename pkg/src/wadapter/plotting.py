"""Figure rendering for training reports, eval summaries, and comparison grids."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def loss_curve(report, path: Path) -> Path:
    """Loss-vs-step curves for one training stage."""
    steps = [r.step for r in report.rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, [r.total for r in report.rows], label="total", lw=1.2)
    if report.stage == 2:
        ax.plot(steps, [r.rec for r in report.rows], label="reconstruction", lw=0.8)
        ax.plot(steps, [r.disen for r in report.rows], label="disentanglement", lw=0.8)
        ax.plot(steps, [r.reg for r in report.rows], label="regularization", lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    name = "base pretraining" if report.stage == 0 else f"stage {report.stage} training"
    ax.set_title(f"{name} loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def image_grid(
    rows: list[list[np.ndarray]],
    path: Path,
    row_labels: list[str] | None = None,
    col_labels: list[str] | None = None,
    title: str | None = None,
) -> Path:
    """Tile images row-major with optional per-row / per-column labels."""
    n_rows = len(rows)
    n_cols = max(len(r) for r in rows)
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(1.6 * n_cols, 1.7 * n_rows), squeeze=False
    )
    for i, row in enumerate(rows):
        for j in range(n_cols):
            ax = axes[i][j]
            ax.axis("off")
            if j < len(row):
                ax.imshow(np.clip(row[j], 0, 1))
                if i == 0 and col_labels:
                    ax.set_title(col_labels[j], fontsize=8)
        if row_labels:
            axes[i][0].axis("on")
            axes[i][0].set_ylabel(row_labels[i], fontsize=8)
            axes[i][0].set_xticks([])
            axes[i][0].set_yticks([])
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def eval_summary_figure(report, path: Path) -> Path:
    """Bar chart of the aggregate eval metrics."""
    names = ["id_distance", "prompt_consistency", "detection_rate", "background_change"]
    vals = [getattr(report, n) for n in names]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(range(len(names)), vals, color="#4878a8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, fontsize=7)
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=7)
    ax.set_title("evaluation summary")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
