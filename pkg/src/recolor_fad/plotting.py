"""Figures written next to the text outputs: loss curves, DET curves, reconstruction grids."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402

from recolor_fad.features import to_uint8  # noqa: E402

GAP = 4
PANELS = ("original", "train path", "test path")


def compose_rows(rows) -> np.ndarray:
    """Tile rows of (3, H, W) images into one uint8 RGB array with white gaps."""
    tiles = [[to_uint8(im) for im in row] for row in rows]
    h, w = tiles[0][0].shape[:2]
    ncol = max(len(r) for r in tiles)
    canvas = np.full((len(tiles) * (h + GAP) - GAP, ncol * (w + GAP) - GAP, 3), 255, np.uint8)
    for i, row in enumerate(tiles):
        for j, tile in enumerate(row):
            canvas[i * (h + GAP):i * (h + GAP) + h, j * (w + GAP):j * (w + GAP) + w] = tile
    return canvas


def panel(canvas: np.ndarray, row: int, col: int, size: int = 256) -> np.ndarray:
    """Cut one tile back out of a composed grid."""
    r0, c0 = row * (size + GAP), col * (size + GAP)
    return canvas[r0:r0 + size, c0:c0 + size]


def save_grid(rows, path, labels=None) -> Path:
    """Write the exact-pixel grid to ``path`` and an annotated figure beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    canvas = compose_rows(rows)
    Image.fromarray(canvas, mode="RGB").save(path)

    nrow = len(rows)
    fig, axes = plt.subplots(nrow, 3, figsize=(7.5, 2.6 * nrow), squeeze=False)
    for i, row in enumerate(rows):
        for j, im in enumerate(row):
            ax = axes[i, j]
            ax.imshow(to_uint8(im), origin="lower", interpolation="nearest", aspect="auto")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(PANELS[j], fontsize=10)
        if labels:
            axes[i, 0].set_ylabel(labels[i], fontsize=8)
    fig.tight_layout()
    fig.savefig(path.with_name(path.stem + "_annotated.png"), dpi=80)
    plt.close(fig)
    return path


@torch.no_grad()
def reconstruction_rows(model, images, temperature=None):
    model.eval()
    soft = model(images, mode="train", temperature=temperature)
    hard = model(images, mode="test")
    return [(x.numpy(), s.numpy(), q.numpy()) for x, s, q in zip(images, soft, hard)]


def save_reconstruction_grid(model, images, path, temperature=None, labels=None) -> Path:
    return save_grid(reconstruction_rows(model, images, temperature), path, labels)


def plot_loss_curve(log_path, out_path) -> Path | None:
    from recolor_fad.training import read_loss_log

    if log_path is None:
        return None
    data = read_loss_log(log_path)
    if len(data) == 0:
        return None
    fig, ax = plt.subplots(figsize=(6, 3.5))
    step = data[:, 0]
    for col, name in ((1, "classification"), (2, "reconstruction")):
        if np.isfinite(data[:, col]).any():
            ax.plot(step, data[:, col], lw=1, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    eer = np.isfinite(data[:, 3])
    if eer.any():
        ax2 = ax.twinx()
        ax2.plot(step[eer], 100 * data[eer, 3], "k.-", label="dev EER")
        ax2.set_ylabel("dev EER (%)")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return Path(out_path)


def plot_det(points, out_path, eer=None) -> Path:
    far, frr = np.array(points).T
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(100 * far, 100 * frr, drawstyle="steps-post")
    ax.plot([0, 100], [0, 100], ":", color="0.6", lw=0.8)
    if eer is not None:
        ax.plot(100 * eer, 100 * eer, "ro", ms=4, label=f"EER {100 * eer:.2f}%")
        ax.legend(loc="upper right")
    ax.set_xlabel("false acceptance rate (%)")
    ax.set_ylabel("false rejection rate (%)")
    ax.set_xlim(0, 100)
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return Path(out_path)


def plot_grid_results(rows, out_path) -> Path:
    """Bar chart of dev EER per experiment cell."""
    labels = ["/".join(str(r[k]) for k in ("classifier", "fusion", "rec_mode", "colors", "init"))
              for r in rows]
    values = [100 * r["dev_eer"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(rows) + 2), 3.5))
    ax.bar(range(len(rows)), values, color="tab:blue")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=70, ha="right", fontsize=7)
    ax.set_ylabel("dev EER (%)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return Path(out_path)
