"""File-only figures: training curves, confusion-matrix heatmaps, ROC curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, stem: Path, formats) -> list[Path]:
    paths = []
    for fmt in formats:
        p = stem.with_suffix(f".{fmt}")
        fig.savefig(p, dpi=120, bbox_inches="tight")
        paths.append(p)
    plt.close(fig)
    return paths


def plot_history(history, stem, formats=("png",)) -> list[Path]:
    """Loss and accuracy versus epoch, train and validation side by side."""
    stem = Path(stem)
    epochs = history.column("epoch")
    fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(10, 4))
    ax_l.plot(epochs, history.column("train_loss"), label="Training loss")
    ax_l.plot(epochs, history.column("val_loss"), label="Validation loss")
    ax_l.set(xlabel="Epoch", ylabel="Loss", title="Training and Validation Loss")
    ax_a.plot(epochs, history.column("train_accuracy"), label="Training accuracy")
    ax_a.plot(epochs, history.column("val_accuracy"), label="Validation accuracy")
    ax_a.set(xlabel="Epoch", ylabel="Accuracy", title="Training and Validation Accuracy", ylim=(0, 1.02))
    for ax in (ax_l, ax_a):
        ax.legend()
        ax.grid(alpha=0.3)
    return _save(fig, stem, formats)


def plot_confusion(cm, stem, title: str = "Confusion matrix", formats=("png",)) -> list[Path]:
    counts = np.asarray(cm.counts)
    n = counts.shape[0]
    fig, ax = plt.subplots(figsize=(1.6 * n + 2, 1.4 * n + 1.5))
    im = ax.imshow(counts, cmap="Blues")
    fig.colorbar(im, ax=ax)
    ax.set_xticks(range(n), cm.class_names, rotation=30, ha="right")
    ax.set_yticks(range(n), cm.class_names)
    ax.set(xlabel="Predicted label", ylabel="True label", title=title)
    thresh = counts.max() / 2 if counts.size else 0
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                    color="white" if counts[i, j] > thresh else "black")
    return _save(fig, Path(stem), formats)


def plot_roc(roc, class_names, stem, title: str = "ROC curves (one-vs-rest)", formats=("png",)) -> list[Path]:
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for c, curve in roc.curves.items():
        ax.plot(curve.fpr, curve.tpr, label=f"{class_names[c]} (AUC = {curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], "k--", lw=0.8, label="Chance")
    ax.set(xlabel="False positive rate", ylabel="True positive rate",
           title=f"{title}\nmacro AUC = {roc.macro_auc:.3f}", xlim=(0, 1), ylim=(0, 1.02))
    ax.legend(loc="lower right")
    return _save(fig, Path(stem), formats)
