"""Figure rendering for the report-producing commands.

Every figure lands next to its CSV so a run directory is self-contained.
The Agg backend keeps this headless-safe.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_rd_figure(path, curves) -> None:
    """Rate-distortion curves on a log bpp axis, one line per labeled series."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for curve in curves:
        ax.plot(curve.bpps, curve.psnrs, marker="o",
                label=curve.label or "series")
    ax.set_xscale("log")
    ax.set_xlabel("bits per point")
    ax.set_ylabel("D1 PSNR (dB)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_loss_figure(path, history) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(np.arange(1, len(history) + 1), history)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross entropy")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_error_histogram(path, sq_errors) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    sq = np.asarray(sq_errors, dtype=np.float64)
    bins = min(50, max(5, int(np.sqrt(sq.size))))
    ax.hist(sq, bins=bins)
    ax.set_xlabel("squared point-to-point error")
    ax.set_ylabel("points")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
