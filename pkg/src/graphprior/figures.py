"""Matplotlib renderings of training and evaluation artifacts.

Every function writes one PNG next to the delimited output it illustrates and
returns the path. The Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_training_curves",
    "plot_per_class_ap",
    "plot_mode_comparison",
    "plot_energy_trace",
    "plot_rare_class_delta",
]

_TERM_LABELS = [
    "classification (gt graph)",
    "energy(gt graph)",
    "-energy(sample)",
    "energy(sample), locked",
    "classification (sample)",
]


def plot_training_curves(metrics, path) -> str:
    """Loss terms and training accuracy per epoch, two stacked panels."""
    epochs = [row.epoch for row in metrics]
    fig, (ax_loss, ax_acc) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for k in range(5):
        ax_loss.plot(epochs, [row.terms[k] for row in metrics], label=_TERM_LABELS[k])
    ax_loss.plot(epochs, [row.total_loss for row in metrics],
                 color="black", linewidth=2, label="total")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=7)
    ax_loss.grid(alpha=0.3)
    ax_acc.plot(epochs, [row.train_accuracy for row in metrics], color="tab:green")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("train accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    ax_acc.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_per_class_ap(report, path, rare_classes=frozenset()) -> str:
    """Per-class AP bars; rare classes highlighted."""
    c = len(report.per_class_ap)
    colors = ["tab:orange" if i in rare_classes else "tab:blue" for i in range(c)]
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(np.arange(c), report.per_class_ap, color=colors)
    ax.set_xlabel("class")
    ax.set_ylabel("AP")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(f"mAP {report.map:.4f}, accuracy {report.accuracy:.4f}")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_mode_comparison(reports: dict, path) -> str:
    """Grouped bars of mAP and accuracy per inference mode."""
    modes = list(reports)
    x = np.arange(len(modes))
    maps = [reports[m].map for m in modes]
    accs = [reports[m].accuracy for m in modes]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, maps, width=0.4, label="mAP", color="tab:blue")
    ax.bar(x + 0.2, accs, width=0.4, label="accuracy", color="tab:green")
    ax.set_xticks(x, modes)
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    for xi, v in zip(x, maps):
        ax.text(xi - 0.2, v + 0.01, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_energy_trace(energies, path) -> str:
    """Energy along one refinement chain."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(len(energies)), energies, marker="o")
    ax.set_xlabel("refinement step")
    ax.set_ylabel("energy")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_rare_class_delta(report, path) -> str:
    """AP change per class, most frequent on the left."""
    n = len(report.rows)
    deltas = [row.delta_ap for row in report.rows]
    labels = [str(row.class_id) for row in report.rows]
    colors = ["tab:green" if d >= 0 else "tab:red" for d in deltas]
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(np.arange(n), deltas, color=colors)
    ax.set_xticks(np.arange(n), labels, fontsize=7)
    ax.set_xlabel("class (most frequent first)")
    ax.set_ylabel("AP change")
    corr = f"{report.spearman:.4f}" if report.spearman_defined else "undefined"
    ax.set_title(f"frequency vs AP-change Spearman: {corr}")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
