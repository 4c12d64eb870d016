"""Summary metrics of a closed-loop run and the payload sweep."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import SimConfig
from .simulation import SimLog, run_simulation

Array = np.ndarray
log = logging.getLogger(__name__)

DEFAULT_PAYLOADS = tuple(0.25 * i for i in range(9))


@dataclass(frozen=True)
class Metrics:
    """RMS strap forces (N), peak tracking error (deg), mean beliefs (%) and timing (ms)."""

    rms_F1: float
    rms_F2: float
    delta_max: tuple[float, ...]
    mu_mean: tuple[float, ...]
    mean_ms: float
    max_ms: float


def compute_metrics(log_: SimLog, settle: float = 2.0) -> Metrics:
    """Summary metrics over the samples with ``t > settle``.

    If the run is shorter than the settle window every sample is used.
    """
    mask = log_.t > settle
    if not mask.any():
        mask = np.ones(log_.t.size, dtype=bool)
    F = log_.F[mask]
    rms = np.sqrt(np.mean(F**2, axis=0))
    err = np.degrees(np.abs(log_.q_H[mask] - log_.q_R[mask])).max(axis=0)
    mu = log_.mu[mask]
    mu_mean = 100.0 * np.mean(mu, axis=0) if mu.size else np.zeros(0)
    ms = log_.step_ms[mask]
    return Metrics(
        float(rms[0]),
        float(rms[1]),
        tuple(float(v) for v in np.atleast_1d(err)),
        tuple(float(v) for v in mu_mean),
        float(ms.mean()) if ms.size else 0.0,
        float(ms.max()) if ms.size else 0.0,
    )


def _run_case(args: tuple[SimConfig, float]) -> dict:
    base, payload = args
    cfg = base.with_(true_payload=float(payload))
    row = {"payload": float(payload)}
    for name in ("nmpc", "msnmpc"):
        m = compute_metrics(run_simulation(cfg, name), cfg.settle)
        row[name] = m
    return row


def sweep_payloads(
    base: SimConfig,
    payloads: Optional[Iterable[float]] = None,
    workers: int = 1,
) -> list[dict]:
    """Run both controllers for each payload and collect their metrics.

    Each row is ``{"payload": kg, "nmpc": Metrics, "msnmpc": Metrics}``.
    Cases are independent, so ``workers > 1`` runs them in separate processes.
    """
    payloads = DEFAULT_PAYLOADS if payloads is None else tuple(payloads)
    jobs = [(base, p) for p in payloads]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_case, jobs))
    rows = []
    for job in jobs:
        log.info("payload %.2f kg", job[1])
        rows.append(_run_case(job))
    return rows


def sweep_table(rows: Sequence[dict], dof: int = 2) -> tuple[list[str], list[list[float]]]:
    """Flatten sweep rows into a header and numeric rows."""
    joints = ("hip", "knee") if dof == 2 else ("knee",)
    n_sc = max((len(r["msnmpc"].mu_mean) for r in rows), default=0)
    header = ["payload"]
    for name in ("nmpc", "msnmpc"):
        header += [f"{name}_rms_F1", f"{name}_rms_F2"]
    for name in ("nmpc", "msnmpc"):
        header += [f"{name}_dmax_{j}" for j in joints]
    header += [f"mu_{i + 1}" for i in range(n_sc)]
    header += ["nmpc_ms", "msnmpc_ms"]
    table = []
    for r in rows:
        a, b = r["nmpc"], r["msnmpc"]
        table.append([r["payload"], a.rms_F1, a.rms_F2, b.rms_F1, b.rms_F2,
                      *a.delta_max, *b.delta_max, *b.mu_mean, a.mean_ms, b.mean_ms])
    return header, table
