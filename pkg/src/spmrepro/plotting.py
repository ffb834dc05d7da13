"""Figures for the campaign report, rendered straight to files (Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIG_WIDTH = 3.5  # single column, inches
DB_RANGE = 30.0


def _finish(fig, path):
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def sspm_heatmap(stacked, path, title=None, db_range=DB_RANGE):
    """Stacked SPM as an image: sources down, steering azimuth across."""
    fig, ax = plt.subplots(figsize=(FIG_WIDTH, FIG_WIDTH * 0.8))
    src = stacked.source_azimuths
    steer = stacked.steering_azimuths
    step = steer[1] - steer[0] if steer.size > 1 else 1.0
    src_step = src[1] - src[0] if src.size > 1 else step
    extent = (steer[0] - step / 2, steer[-1] + step / 2, src[-1] + src_step / 2, src[0] - src_step / 2)
    im = ax.imshow(stacked.db, aspect="auto", cmap="gray", vmin=-db_range, vmax=0.0,
                   extent=extent, interpolation="nearest")
    ax.set_xlabel("steering azimuth (deg)")
    ax.set_ylabel("source azimuth (deg)")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, label="dB")
    return _finish(fig, path)


def sspm_grid(maps, path, db_range=DB_RANGE):
    """Several stacked SPMs side by side; ``maps`` is a list of (label, StackedSpm)."""
    n = len(maps)
    if n == 0:
        raise ValueError("nothing to plot")
    fig, axes = plt.subplots(1, n, figsize=(1.9 * n + 0.6, 2.2), sharey=True, squeeze=False)
    im = None
    for ax, (label, st) in zip(axes[0], maps):
        im = ax.imshow(st.db, aspect="auto", cmap="gray", vmin=-db_range, vmax=0.0,
                       extent=(0, 360, st.source_azimuths[-1], st.source_azimuths[0]), interpolation="nearest")
        ax.set_title(label, fontsize=8)
        ax.set_xticks([0, 180, 360])
        ax.tick_params(labelsize=7)
    axes[0, 0].set_ylabel("source (deg)", fontsize=8)
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    return _finish(fig, path)


def loss_curves(curves, path, title=None):
    """Training/solver loss against iteration; ``curves`` maps label to sequence."""
    fig, ax = plt.subplots(figsize=(FIG_WIDTH, FIG_WIDTH * 0.7))
    for label, c in curves.items():
        c = np.asarray(c, dtype=float)
        if c.size == 0:
            continue
        ax.semilogy(np.arange(c.size), np.maximum(c, 1e-300), lw=0.8, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title, fontsize=9)
    if curves:
        ax.legend(fontsize=7, frameon=False)
    return _finish(fig, path)


def response_plot(g, target, path, sample_rate, title=None):
    """Time response of one mic against its target, level in dB."""
    fig, ax = plt.subplots(figsize=(FIG_WIDTH, FIG_WIDTH * 0.7))
    t = np.arange(len(g)) / sample_rate * 1e3
    for x, label in ((target, "target"), (g, "response")):
        ax.plot(t[: len(x)], 20 * np.log10(np.maximum(np.abs(x), 1e-6)), lw=0.6, label=label)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("level (dB)")
    ax.set_ylim(-100, 10)
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=7, frameon=False)
    return _finish(fig, path)
