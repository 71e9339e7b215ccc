"""Report figures written next to the CSV outputs (Agg backend, PNG files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_STYLE = {
    "modeling": dict(color="#1f77b4", lw=1.4),
    "total": dict(color="black", lw=1.0, ls="--"),
    "nuclear": dict(color="#2ca02c", lw=1.0),
    "placing": dict(color="#d62728", lw=1.0),
    "covering": dict(color="#9467bd", lw=1.0),
    "volume": dict(color="#8c564b", lw=1.0),
}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_log(rows, path, columns=("modeling", "nuclear", "placing", "covering", "total")):
    """Loss curves on a log axis. ``rows`` are dicts with an ``iteration`` key."""
    if not rows:
        return
    its = np.array([r["iteration"] for r in rows])
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for col in columns:
        y = np.array([r[col] for r in rows], dtype=float)
        if np.all(y <= 0):
            continue
        ax.plot(its, np.where(y > 0, y, np.nan), label=col, **LOSS_STYLE.get(col, {}))
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, fontsize=8)
    ax.grid(alpha=0.3, which="both")
    _finish(fig, path)


def plot_init_check(dist, err, path, radius):
    """Deviation of the initialized model from the sphere distance, against |p - t|."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.scatter(dist, err, s=4, alpha=0.5)
    ax.axvline(radius, color="gray", lw=0.8, ls=":")
    ax.set_xlabel(r"$\|p - t\|$")
    ax.set_ylabel(r"$|f(p, z) - (\|p - t\| - r)|$")
    _finish(fig, path)


def plot_width_sweep(widths, mean_errors, path):
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(widths, mean_errors, "o-")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("hidden width")
    ax.set_ylabel("mean |error|")
    ax.grid(alpha=0.3)
    _finish(fig, path)
