"""Report figures rendered straight to files.

All functions take already-computed results and a destination path; nothing
here opens a window (the Agg backend is forced so headless runs work).
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

from .evaluation import EvalReport
from .training import EpochRecord


def plot_history(history: Sequence[EpochRecord], path: str | Path) -> Path:
    """Training curves: episode-mean loss, validation accuracy and lr per epoch."""
    epochs = [row.epoch for row in history]
    fig, (ax_loss, ax_acc) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)

    ax_loss.plot(epochs, [row.train_loss for row in history], color="tab:red", marker="o", ms=3)
    ax_loss.set_ylabel("train loss")
    ax_loss.grid(alpha=0.3)

    ax_acc.plot(epochs, [row.val_acc for row in history], color="tab:blue", marker="o", ms=3,
                label="val accuracy")
    ax_acc.set_ylabel("val accuracy")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylim(0.0, 1.0)
    ax_acc.grid(alpha=0.3)

    ax_lr = ax_acc.twinx()
    ax_lr.plot(epochs, [row.lr for row in history], color="tab:gray", ls="--", label="lr")
    ax_lr.set_ylabel("lr")
    ax_lr.set_yscale("log")

    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_eval_histogram(report: EvalReport, path: str | Path) -> Path:
    """Distribution of per-task accuracies with the mean and CI band marked."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(report.per_task, bins=20, range=(0.0, 1.0), color="tab:blue", alpha=0.75)
    mean, hw = report.mean_accuracy, report.ci95_half_width
    ax.axvline(mean, color="tab:red", lw=2, label=f"mean = {report.formatted()} %")
    ax.axvspan(mean - hw, mean + hw, color="tab:red", alpha=0.15)
    ax.set_xlabel("per-task accuracy")
    ax.set_ylabel("tasks")
    ax.set_title(f"{report.spec.n_way}-way {report.spec.k_shot}-shot, {report.n_tasks} tasks")
    ax.legend()
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_ablation(rows: Sequence[tuple[str, float, float]], path: str | Path) -> Path:
    """Bar chart over ablation variants; rows are (label, mean, ci_half_width)."""
    labels = [r[0] for r in rows]
    means = [r[1] for r in rows]
    errors = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(rows)), 4.5))
    positions = range(len(rows))
    ax.bar(positions, means, yerr=errors, capsize=4, color="tab:blue", alpha=0.8)
    ax.set_xticks(list(positions))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("mean accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
