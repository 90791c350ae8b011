"""Figures written next to the tabular and JSON outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_training_curves(records, path, title=None):
    """Train/dev loss (log scale) and dev error rate per epoch."""
    epochs = [r["epoch"] for r in records]
    fig, (ax_loss, ax_per) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_loss.semilogy(epochs, [r["train_loss"] for r in records], "o-", ms=3, label="train")
    ax_loss.semilogy(epochs, [r["dev_loss"] for r in records], "s-", ms=3, label="dev")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(frameon=False)
    ax_per.plot(epochs, [r["dev_per"] for r in records], "o-", ms=3, color="C2")
    ax_per.set_xlabel("epoch")
    ax_per.set_ylabel("dev PER (%)")
    ax_lr = ax_per.twinx()
    ax_lr.semilogy(epochs, [r["lr"] for r in records], ":", color="0.5")
    ax_lr.set_ylabel("learning rate", color="0.5")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_param_table(tables: dict, path):
    """Grouped bars of per-layer parameter counts, one group per model."""
    fig, ax = plt.subplots(figsize=(8, 3.6))
    names = list(tables)
    layers = list(dict.fromkeys(layer for rows in tables.values() for layer, _ in rows))
    width = 0.8 / len(names)
    for k, name in enumerate(names):
        counts = dict(tables[name])
        xs = [i + k * width for i in range(len(layers))]
        ax.bar(xs, [counts.get(layer, 0) for layer in layers], width, label=f"{name} ({sum(counts.values()):,})")
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(layers))])
    ax.set_xticklabels(layers, rotation=45, ha="right")
    ax.set_yscale("log")
    ax.set_ylabel("real parameters")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
