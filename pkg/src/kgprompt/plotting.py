"""File-only figures for evaluation reports and training logs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# svg hashes are stable only with a fixed salt, png output has no timestamp
matplotlib.rcParams["svg.hashsalt"] = "kgprompt"


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_roc(points, path, threshold: float | None = None, title: str = "ROC") -> Path:
    """Step ROC as FAR against 1 - FRR, with the operating point marked.

    `points` are objects with ``threshold``, ``far`` and ``frr`` attributes.
    """
    far = np.array([p.far for p in points])
    tpr = 1.0 - np.array([p.frr for p in points])
    order = np.lexsort((tpr, far))
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.step(far[order], tpr[order], where="post", color="C0", lw=1.5, label="ROC")
    ax.plot([0, 1], [0, 1], ls=":", color="0.6", lw=1)
    if threshold is not None and len(points):
        th = np.array([p.threshold for p in points])
        # first ROC point at or above the threshold carries its (FAR, FRR)
        i = min(int(np.searchsorted(th, threshold, side="left")), len(points) - 1)
        ax.plot(far[i], tpr[i], "o", color="C3", label=f"threshold {threshold:.3g}")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("FAR")
    ax.set_ylabel("1 - FRR")
    ax.set_title(title)
    ax.legend(loc="lower right", frameon=False)
    return _finish(fig, path)


def plot_loss_history(history, path, title: str = "training loss") -> Path:
    """Per-epoch srd, sce and total loss from a list of EpochLog records."""
    epochs = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for name, style in (("total", "-"), ("srd", "--"), ("sce", ":")):
        ax.plot(epochs, [getattr(h, name) for h in history], style, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _finish(fig, path)
