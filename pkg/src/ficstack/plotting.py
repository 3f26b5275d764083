"""Figures written next to run logs and profile exports (Agg backend, PNG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_tracking(log, path) -> str:
    """End-effector reference and executed path in the yz and xz planes."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for ax, (i, j), lab in zip(axes, [(1, 2), (0, 2)], ["yz", "xz"]):
        ax.plot(log.ee_ref[:, i], log.ee_ref[:, j], "k--", lw=1, label="reference")
        ax.plot(log.ee_pos[:, i], log.ee_pos[:, j], "C0", lw=1, label="executed")
        ax.set_xlabel(f"{lab[0]} [m]")
        ax.set_ylabel(f"{lab[1]} [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="best")
    return _save(fig, path)


def plot_errors(log, path, window_start: float = 0.0) -> str:
    frames = list(log.errors)
    fig, axes = plt.subplots(len(frames), 1, figsize=(9, 2.6 * len(frames)), sharex=True,
                             squeeze=False)
    for ax, f in zip(axes[:, 0], frames):
        for k, a in enumerate("xyz"):
            ax.plot(log.t, 1000 * log.errors[f][:, k], lw=0.8, label=a)
        ax.axvline(window_start, color="0.5", ls=":", lw=1)
        ax.set_ylabel(f"{f} error [mm]")
        ax.grid(alpha=0.3)
        ax.legend(loc="upper right", ncol=3, fontsize=8)
    axes[-1, 0].set_xlabel("t [s]")
    return _save(fig, path)


def plot_torques(log, path) -> str:
    fig, axes = plt.subplots(2, 1, figsize=(9, 5.5), sharex=True)
    for i in range(log.tau_cmd.shape[1]):
        axes[0].plot(log.t, log.tau_cmd[:, i], lw=0.7, label=f"j{i}")
        axes[1].plot(log.t, log.tau_ext[:, i], lw=0.7)
    axes[0].set_ylabel("commanded [N m]")
    axes[1].set_ylabel("external [N m]")
    axes[1].set_xlabel("t [s]")
    axes[0].legend(ncol=7, fontsize=7, loc="upper right")
    for ax in axes:
        ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_run(log, out_dir, window_start: float = 0.0) -> list:
    out_dir = Path(out_dir)
    return [plot_tracking(log, out_dir / "tracking.png"),
            plot_errors(log, out_dir / "errors.png", window_start),
            plot_torques(log, out_dir / "torques.png")]


def plot_profile(table: np.ndarray, path) -> str:
    """``table`` rows are (x_err, force, energy)."""
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.8))
    ax[0].plot(table[:, 0], table[:, 1])
    ax[0].set_xlabel("error")
    ax[0].set_ylabel("force")
    ax[1].plot(table[:, 0], table[:, 2])
    ax[1].set_xlabel("error")
    ax[1].set_ylabel("energy")
    for a in ax:
        a.grid(alpha=0.3)
    return _save(fig, path)


def plot_phase_portrait(trajs, path) -> str:
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for tr in trajs:
        ax.plot(tr.x_err, -tr.x_dot, lw=0.8)
        ax.plot(tr.x_err[0], -tr.x_dot[0], "k.", ms=4)
    ax.plot(0, 0, "r+", ms=10)
    ax.set_xlabel("error")
    ax.set_ylabel("error rate")
    ax.grid(alpha=0.3)
    return _save(fig, path)
