"""Report artifacts: metric tables, greyscale slice dumps and figures."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

METRICS_HEADER = ("specimen", "method", "rmse", "ssim")

_FIGURE_DPI = 150


def write_metrics_csv(path, rows: list[dict]) -> None:
    """Rows carry specimen/method/rmse/ssim; floats are written via repr."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(
                [row["specimen"], row["method"], repr(float(row["rmse"])), repr(float(row["ssim"]))]
            )


def read_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            row["rmse"] = float(row["rmse"])
            row["ssim"] = float(row["ssim"])
            rows.append(row)
    return rows


def write_pgm(path, image01: np.ndarray) -> None:
    """8-bit binary PGM of an image already scaled to [0, 1]."""
    img = np.clip(np.asarray(image01, dtype=float), 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def write_loss_history_csv(path, history: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "scan", "bce"])
        for e in range(history.shape[0]):
            for s in range(history.shape[1]):
                writer.writerow([e, s, repr(float(history[e, s]))])


def loss_curve_figure(path, history: np.ndarray) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(history.shape[0])
    for s in range(history.shape[1]):
        ax.plot(epochs, history[:, s], lw=0.8, alpha=0.6, label=f"scan {s}")
    ax.plot(epochs, history.mean(axis=1), color="black", lw=1.8, label="mean")
    ax.set_xlabel("epoch")
    ax.set_ylabel("BCE")
    ax.set_title("training loss")
    if history.shape[1] <= 8:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_FIGURE_DPI)
    plt.close(fig)


def comparison_figure(path, slices: dict[str, np.ndarray], metrics: dict[str, tuple[float, float]], title: str) -> None:
    """Side-by-side greyscale panels of one axial slice per reconstruction."""
    names = list(slices)
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.6))
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        ax.imshow(slices[name].T, cmap="gray", vmin=0.0, vmax=1.0, origin="lower")
        label = name
        if name in metrics:
            r, s = metrics[name]
            label = f"{name}\nRMSE {r:.3f}  SSIM {s:.3f}"
        ax.set_title(label, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=_FIGURE_DPI)
    plt.close(fig)
