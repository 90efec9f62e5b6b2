"""Report figures: trajectories, RPE series and per-stage timing bars."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import STAGES  # noqa: E402

STYLE = {"figure.dpi": 110, "axes.grid": True, "grid.alpha": 0.3, "axes.spines.top": False,
         "axes.spines.right": False, "font.size": 9, "legend.frameon": False}


def _xy(poses):
    return np.array([p.pose.t[:2] for p in poses]).reshape(-1, 2)


def plot_trajectories(trajectories: dict, truth, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4))
        t = _xy(truth)
        ax.plot(t[:, 0], t[:, 1], "k--", lw=1.5, label="truth")
        for name, traj in trajectories.items():
            e = _xy(traj)
            ax.plot(e[:, 0], e[:, 1], lw=1, label=name)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_rpe(stats: dict, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for name, s in stats.items():
            ax.plot(np.arange(s.pairs), s.errors * 1000.0, lw=1, label=f"{name} ({s.rmse * 1000:.2f} mm)")
        ax.set_xlabel("pair index")
        ax.set_ylabel("translation RPE [mm]")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_timing(tables: dict, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        names = list(tables)
        bottom = np.zeros(len(names))
        for stage in STAGES:
            ms = np.array([tables[n].stages[stage].mean_ms for n in names])
            ax.bar(names, ms, bottom=bottom, label=stage)
            bottom += ms
        ax.set_ylabel("mean time per scan [ms]")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
