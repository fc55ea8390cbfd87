"""Figures written next to the delimited outputs of train, bench and eval."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training(records, path):
    """Epoch-mean SILog loss and, where evaluated, held-out Abs Rel."""
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.loss for r in records], label="train SILog")
    ax.set_xlabel("epoch")
    ax.set_ylabel("SILog loss")
    ax.set_yscale("log")
    evald = [r for r in records if r.metrics is not None]
    if evald:
        ax2 = ax.twinx()
        ax2.plot([r.epoch for r in evald], [r.metrics.abs_rel for r in evald], "o-", color="tab:orange", label="held-out Abs Rel")
        ax2.set_ylabel("Abs Rel")
        ax2.legend(loc="upper center")
    ax.legend(loc="upper right")
    return _save(fig, path)


def plot_bench(rows, path):
    """Attention MACs against pixel count on log-log axes."""
    px = np.array([r.pixels for r in rows], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(px, [r.window_macs for r in rows], "o-", label="windowed (measured)")
    ax.loglog(px, [r.dense_macs for r in rows], "s--", label="dense (analytic)")
    ax.set_xlabel("pixels")
    ax.set_ylabel("attention MACs")
    ax.legend()
    return _save(fig, path)


def plot_depth(rgb, pred, gt, path, max_depth=None):
    """Input image, prediction, ground truth and absolute error side by side."""
    pred = np.asarray(pred).squeeze()
    gt = np.asarray(gt).squeeze()
    vmax = max_depth or float(max(pred.max(), gt.max()))
    fig, axes = plt.subplots(1, 4, figsize=(12, 3.2))
    axes[0].imshow(np.clip(np.asarray(rgb).transpose(1, 2, 0), 0, 1))
    axes[0].set_title("image")
    for ax, img, title in ((axes[1], pred, "prediction"), (axes[2], gt, "ground truth")):
        im = ax.imshow(img, cmap="magma_r", vmin=0, vmax=vmax)
        ax.set_title(title)
    fig.colorbar(im, ax=axes[1:3], fraction=0.03)
    err = axes[3].imshow(np.abs(pred - gt), cmap="viridis")
    axes[3].set_title("|error|")
    fig.colorbar(err, ax=axes[3], fraction=0.046)
    for ax in axes:
        ax.set_axis_off()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path
