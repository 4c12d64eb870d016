"""CSV logs, sweep tables and optional static plots."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .simulation import SimLog


def _fmt(v: float) -> str:
    return repr(float(v))


def log_columns(log: SimLog) -> list[str]:
    joints = ("hip", "knee") if log.dof == 2 else ("knee",)
    cols = ["t"]
    for prefix in ("qH", "qdH", "qR", "qdR", "TR"):
        cols += [f"{prefix}_{j}" for j in joints]
    cols += ["F1", "F2"]
    cols += [f"qhatH_{j}" for j in joints]
    cols += [f"mu_{i + 1}" for i in range(log.mu.shape[1])]
    cols += [f"Dhat_{i + 1}" for i in range(log.dof)]
    cols += ["sqp_iters", "step_ms"]
    return cols


def blended_disturbance(log: SimLog) -> np.ndarray:
    """Belief-weighted disturbance estimate per joint; zero without beliefs."""
    if np.all(np.isnan(log.mu)):
        return np.zeros((len(log), log.dof))
    return np.einsum("kn,knd->kd", log.mu, log.D_hat)


def log_rows(log: SimLog) -> np.ndarray:
    D = blended_disturbance(log)
    parts = [log.t[:, None], log.q_H, log.qd_H, log.q_R, log.qd_R, log.T_R, log.F,
             log.q_hat_H, log.mu, D, log.sqp_iters[:, None], log.step_ms[:, None]]
    return np.hstack([np.asarray(p, dtype=float).reshape(len(log), -1) for p in parts])


def write_log_csv(log: SimLog, path: str | Path) -> Path:
    """One row per control step with a fixed header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(log_columns(log))
        for row in log_rows(log):
            w.writerow([_fmt(v) for v in row])
    return path


def read_log_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    data = data.reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def write_table_csv(header: Sequence[str], rows: Sequence[Sequence[float]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def plot_logs(logs: dict[str, SimLog], out_dir: str | Path) -> list[Path]:
    """Line charts of tracking, torques, strap forces and beliefs.

    Needs matplotlib; raises ImportError if it is not installed.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    any_log = next(iter(logs.values()))
    joints = ("hip", "knee") if any_log.dof == 2 else ("knee",)

    fig, axes = plt.subplots(len(joints), 3, figsize=(12, 3 * len(joints)), squeeze=False)
    for name, lg in logs.items():
        for j, joint in enumerate(joints):
            axes[j, 0].plot(lg.t, np.degrees(lg.q_H[:, j] - lg.q_R[:, j]), label=name)
            axes[j, 0].set_ylabel(f"{joint} error [deg]")
            axes[j, 1].plot(lg.t, lg.qd_R[:, j], label=name)
            axes[j, 1].set_ylabel(f"{joint} velocity [rad/s]")
            axes[j, 2].plot(lg.t, lg.T_R[:, j], label=name)
            axes[j, 2].set_ylabel(f"{joint} torque [N m]")
    for ax in axes[-1]:
        ax.set_xlabel("t [s]")
    axes[0, 0].legend()
    fig.tight_layout()
    written.append(out_dir / "tracking.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)

    fig, axes = plt.subplots(1, 2, figsize=(12, 3.5))
    for name, lg in logs.items():
        if lg.dof == 2:
            axes[0].plot(lg.t, lg.F[:, 0], label=f"{name} F1")
        axes[0].plot(lg.t, lg.F[:, 1], label=f"{name} F2")
        if not np.all(np.isnan(lg.mu)):
            for i in range(lg.mu.shape[1]):
                axes[1].plot(lg.t, lg.mu[:, i], label=f"mu_{i + 1} ({lg.hypotheses[i]:g} kg)")
    axes[0].set_ylabel("strap force [N]")
    axes[1].set_ylabel("probability")
    for ax in axes:
        ax.set_xlabel("t [s]")
        ax.legend()
    fig.tight_layout()
    written.append(out_dir / "forces.png")
    fig.savefig(written[-1], dpi=120)
    plt.close(fig)
    return written
