"""Matplotlib figures rendered next to the CSV/JSON reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_COLORS = {
    "baseline": "tab:blue",
    "light_sparse": "tab:orange",
    "uniform_sparse": "tab:green",
    "aggressive_sparse": "tab:red",
}


def _color(name: str):
    return _COLORS.get(name)


def plot_sparsity_vs_accuracy(points: list[dict], r: float | None, path: Path) -> None:
    """Scatter of final validation accuracy against overall achieved sparsity."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for p in points:
        ax.scatter(p["sparsity"], p["accuracy"], color=_color(p["config"]), s=60)
        ax.annotate(p["config"], (p["sparsity"], p["accuracy"]),
                    textcoords="offset points", xytext=(6, 4), fontsize=8)
    title = "Validation accuracy vs. achieved attention sparsity"
    if r is not None:
        title += f"  (Pearson r = {r:.3f})"
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("mean achieved sparsity")
    ax.set_ylabel("final validation accuracy")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_layer_sparsity(per_run: dict[str, list[float]], path: Path) -> None:
    """Achieved sparsity per layer for each run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in per_run.items():
        ax.plot(range(len(values)), values, marker="o", label=name, color=_color(name))
    ax.set_xlabel("layer")
    ax.set_ylabel("achieved sparsity")
    ax.set_title("Layer-wise achieved sparsity", fontsize=10)
    ax.set_ylim(-0.05, 1.0)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_entropy(per_run: dict[str, list[float]], path: Path) -> None:
    """Grouped bars of mean attention entropy per layer for each run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    runs = list(per_run)
    layers = max((len(v) for v in per_run.values()), default=0)
    width = 0.8 / max(len(runs), 1)
    for idx, name in enumerate(runs):
        values = per_run[name]
        xs = [l + idx * width for l in range(len(values))]
        ax.bar(xs, values, width=width, label=name, color=_color(name))
    ax.set_xticks([l + 0.4 - width / 2 for l in range(layers)])
    ax.set_xticklabels([str(l) for l in range(layers)])
    ax.set_xlabel("layer")
    ax.set_ylabel("mean row entropy (nats)")
    ax.set_title("Attention entropy by layer", fontsize=10)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_curves(per_run: dict[str, list[dict]], path: Path) -> None:
    """Loss and accuracy curves for every run, one panel each."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for name, rows in per_run.items():
        steps = [row["step"] for row in rows]
        ax_loss.plot(steps, [row["train_loss"] for row in rows],
                     color=_color(name), linestyle="--", alpha=0.6)
        ax_loss.plot(steps, [row["val_loss"] for row in rows],
                     color=_color(name), label=name)
        ax_acc.plot(steps, [row["val_accuracy"] for row in rows],
                    color=_color(name), label=name)
    ax_loss.set_xlabel("optimizer step")
    ax_loss.set_ylabel("loss (dashed: train, solid: validation)")
    ax_loss.grid(True, alpha=0.3)
    ax_loss.legend(fontsize=8)
    ax_acc.set_xlabel("optimizer step")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.grid(True, alpha=0.3)
    fig.suptitle("Training dynamics", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
