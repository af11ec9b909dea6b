"""Figure rendering for run and sweep reports (files only, non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .integrator import Trajectory  # noqa: E402


def plot_trajectory(traj: Trajectory, path, title: str = "") -> None:
    """Three stacked panels: actions, constraint values, cost."""
    fig, axes = plt.subplots(3, 1, figsize=(7, 7.5), sharex=True)
    t = traj.times
    for i in range(traj.x.shape[1]):
        axes[0].plot(t, traj.x[:, i], lw=0.9, label=f"x{i + 1}")
    axes[0].set_ylabel("action")
    if traj.x.shape[1] <= 8:
        axes[0].legend(fontsize=7, ncol=4, loc="best")
    if traj.g.shape[1]:
        axes[1].plot(t, traj.g, lw=0.7)
    axes[1].axhline(0.0, color="k", lw=0.6, ls="--")
    axes[1].set_ylabel("g (feedback)")
    axes[2].plot(t, traj.cost, color="C3", lw=0.9)
    axes[2].set_ylabel("cost")
    axes[2].set_xlabel("t")
    if title:
        axes[0].set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_sweep(rows: list[dict], column: str, path, x_key: str | None = None) -> None:
    """One metric against the sweep index (or a swept parameter when ``x_key`` is numeric)."""
    ok = [r for r in rows if r.get("status") == "ok"]
    if not ok:
        return
    try:
        xs = np.array([float(r[x_key]) for r in ok]) if x_key else np.arange(len(ok))
    except (TypeError, ValueError):
        xs = np.arange(len(ok))
    ys = np.array([float(r.get(column, np.nan)) for r in ok])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, "o-")
    ax.set_xlabel(x_key or "grid point")
    ax.set_ylabel(column)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
