"""Figures written next to the CSV/Markdown reports."""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .artifacts import atomic_write_bytes  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}

COLORS = {"CNN": "#1f77b4", "SVM": "#d62728", "Fused": "#2ca02c"}


def _save(fig, path, config_hash: str | None = None) -> Path:
    buf = io.BytesIO()
    # no Software/date metadata so identical figures are byte-identical
    meta = {"Software": None}
    if config_hash:
        meta["config_hash"] = config_hash
    fig.savefig(buf, format="png", metadata=meta)
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def sweep_figure(rows: list[dict], path, title: str = "", reference: dict | None = None,
                 config_hash: str | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        x = [100 * r["setting"] for r in rows]
        for name, key in (("CNN", "cnn_accuracy"), ("SVM", "svm_accuracy"), ("Fused", "fused_accuracy")):
            ax.plot(x, [100 * r[key] for r in rows], marker="o", ms=3, lw=1.2,
                    color=COLORS[name], label=name)
        if reference:
            ks = sorted(reference)
            ax.plot([100 * k for k in ks], [reference[k] for k in ks], ls="--", lw=1,
                    color="0.5", label="reference")
        xlabel = "training data (%)" if rows and rows[0].get("param") == "train" else "fusion-map data (%)"
        ax.set_xlabel(xlabel)
        ax.set_ylabel("test accuracy (%)")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path, config_hash)


def confusion_figure(cm: np.ndarray, classes: list[str], path, title: str = "",
                     config_hash: str | None = None) -> Path:
    cm = np.asarray(cm)
    k = cm.shape[0]
    with plt.rc_context(STYLE):
        size = max(3.0, 0.35 * k + 1.5)
        fig, ax = plt.subplots(figsize=(size, size))
        ax.imshow(cm, cmap="Blues", interpolation="nearest")
        if k <= 16:
            for i in range(k):
                for j in range(k):
                    if cm[i, j]:
                        ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=7,
                                color="white" if cm[i, j] > cm.max() / 2 else "black")
            ax.set_xticks(range(k), classes, rotation=90)
            ax.set_yticks(range(k), classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path, config_hash)


def runs_figure(rows: list[dict], path, title: str = "", config_hash: str | None = None) -> Path:
    """Grouped bars of CNN / SVM / fused accuracy per run."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.0))
        n = len(rows)
        xs = np.arange(n)
        for off, (name, key) in zip((-0.25, 0.0, 0.25), (("CNN", "cnn_accuracy"),
                                                         ("SVM", "svm_accuracy"),
                                                         ("Fused", "fused_accuracy"))):
            ax.bar(xs + off, [100 * r[key] for r in rows], width=0.25, color=COLORS[name], label=name)
        ax.set_xticks(xs, [f"Exp. {i + 1}" for i in range(n)])
        ax.set_ylabel("test accuracy (%)")
        lo = min(100 * min(r[k] for k in ("cnn_accuracy", "svm_accuracy", "fused_accuracy")) for r in rows)
        ax.set_ylim(max(0.0, lo - 10), 100)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, ncol=3, loc="lower center")
        fig.tight_layout()
        return _save(fig, path, config_hash)


def history_figure(train_loss: list[float], val_accuracy: list[float], path, best_epoch: int = -1,
                   config_hash: str | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.0))
        ep = np.arange(1, len(train_loss) + 1)
        ax.plot(ep, train_loss, color="0.3", lw=1, label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss")
        ax2 = ax.twinx()
        ax2.plot(ep, 100 * np.asarray(val_accuracy), color=COLORS["CNN"], lw=1, label="val accuracy")
        ax2.set_ylabel("validation accuracy (%)")
        if best_epoch >= 0:
            ax2.axvline(best_epoch + 1, color="0.6", ls=":", lw=1)
        fig.tight_layout()
        return _save(fig, path, config_hash)
