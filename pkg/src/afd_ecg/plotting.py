"""Figures written next to the CSV/JSON artifacts. Display-only."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def plot_tfr(grid, path, sample_rate: float | None = None, title: str = "") -> None:
    """Time-frequency image; axes in samples/Hz when the rate is known."""
    M = grid.times.size
    # pcolormesh wants cell edges: M + 1 along time.
    if sample_rate:
        x = np.arange(M + 1) / sample_rate
        y_scale = sample_rate / M
        xlabel, ylabel = "time (s)", "frequency (Hz)"
    else:
        x = np.append(grid.times, 2 * np.pi)
        y_scale = 1.0
        xlabel, ylabel = "t (rad)", "IF (cycles / segment)"
    fig, ax = plt.subplots(figsize=(6, 3.6))
    mesh = ax.pcolormesh(x, grid.edges * y_scale, grid.energy.T, shading="flat",
                         cmap="magma_r")
    fig.colorbar(mesh, ax=ax, label="energy")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_reconstruction(samples, approx, path, sample_rate: float | None = None,
                        title: str = "") -> None:
    samples = np.asarray(samples)
    x = np.arange(samples.size) / sample_rate if sample_rate else np.arange(samples.size)
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(x, samples, "k-", lw=1.2, label="beat")
    ax.plot(x, approx, "r:", lw=1.5, label="AFD approximation")
    ax.set_xlabel("time (s)" if sample_rate else "sample")
    ax.set_ylabel("mV")
    ax.legend(loc="upper right", frameon=False)
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_confusion(cm, m, path) -> None:
    counts = cm.counts
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    ax.imshow(counts / np.maximum(counts.sum(axis=1, keepdims=True), 1), cmap="Blues",
              vmin=0, vmax=1)
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            ax.text(j, i, str(int(counts[i, j])), ha="center", va="center", fontsize=9)
    ax.set_xticks(range(len(cm.classes)), cm.classes)
    ax.set_yticks(range(len(cm.classes)), cm.classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("reference")
    ax.set_title(f"Acc {100 * m.acc:.2f}%")
    _save(fig, path)
