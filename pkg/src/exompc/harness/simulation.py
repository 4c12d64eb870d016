"""Closed-loop simulation of the human leg, the exoskeleton and a controller."""

from __future__ import annotations

import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from ..dynamics import IntegrationError, JointState, human_model, human_step, robot_step
from ..human import human_mass_at, human_torque, reference_trajectory
from ..interaction import InteractionForces, estimate_human_state, interaction_torques, strap_forces
from ..msnmpc import MsSettings, MultiStageController
from ..nmpc import NmpcController
from .config import SimConfig

Array = np.ndarray
log = logging.getLogger(__name__)


class Uncertainties(NamedTuple):
    m_dis: float  # kg added to each robot link
    D: float  # N*m lumped disturbance on every joint
    noise_qd: float  # rad/s on velocity readings
    noise_F: float  # N on force readings


def disturbance_models(
    t: float,
    mass_wobble: bool = True,
    disturbance: bool = True,
    sensor_noise: bool = True,
) -> Uncertainties:
    """Deterministic plant uncertainty and sensor noise at time ``t``."""
    m_dis = 0.05 * np.sin(t) + 0.01 * np.sin(100.0 * t + np.pi / 4) if mass_wobble else 0.0
    D = 0.1 * np.sin(t) + 0.05 * np.sin(100.0 * t + np.pi / 2) if disturbance else 0.0
    if sensor_noise:
        s = np.sin(100.0 * t)
        return Uncertainties(float(m_dis), float(D), 1e-4 * s, 1e-3 * s)
    return Uncertainties(float(m_dis), float(D), 0.0, 0.0)


def sensor_filter(history) -> Array:
    """Arithmetic mean of the buffered samples."""
    return np.mean(np.asarray(history, dtype=float), axis=0)


class MovingAverage:
    """Mean of the last ``window`` samples, padded with the first sample."""

    def __init__(self, window: int = 5):
        self.window = window
        self._buf: deque = deque(maxlen=window)

    def __call__(self, sample) -> Array:
        sample = np.asarray(sample, dtype=float)
        if not self._buf:
            self._buf.extend([sample] * self.window)
        else:
            self._buf.append(sample)
        return sensor_filter(self._buf)


@dataclass
class SimLog:
    controller: str
    dof: int
    payload: float
    hypotheses: tuple[float, ...]
    t: Array
    q_H: Array
    qd_H: Array
    q_R: Array
    qd_R: Array
    T_R: Array
    T_H: Array
    F: Array  # (K, 2) thigh, shank
    q_hat_H: Array
    qd_hat_H: Array
    mu: Array  # (K, N), NaN for the non-robust controller
    D_hat: Array  # (K, N, dof)
    sqp_iters: Array
    step_ms: Array
    warnings: int = 0
    aborted: bool = False

    def __len__(self) -> int:
        return self.t.size


@dataclass
class _Rows:
    cols: dict = field(default_factory=lambda: {k: [] for k in (
        "t", "q_H", "qd_H", "q_R", "qd_R", "T_R", "T_H", "F", "q_hat_H", "qd_hat_H",
        "mu", "D_hat", "sqp_iters", "step_ms")})

    def add(self, **kw) -> None:
        for k, v in kw.items():
            self.cols[k].append(np.array(v, dtype=float, copy=True))


def make_controller(config: SimConfig, name: str):
    if name == "nmpc":
        return NmpcController(config.robot, config.nmpc, config.sqp)
    if name == "msnmpc":
        settings = MsSettings(config.c1, config.mu_floor, config.nmpc, config.ekf, config.sqp)
        return MultiStageController(config.robot, tuple(config.hypotheses), settings)
    raise ValueError(f"unknown controller {name!r}")


def run_simulation(
    config: SimConfig,
    controller: Optional[str] = None,
    payload_schedule: Optional[Callable[[float], float]] = None,
) -> SimLog:
    """Simulate one controller in closed loop and return the per-step log.

    ``payload_schedule`` optionally overrides the plant's true payload as a
    function of time; it only ever reaches the plant model.
    """
    name = controller or config.controller
    if name == "both":
        raise ValueError("run_simulation runs a single controller; use run_controllers")
    dof, dt, K = config.dof, config.dt, config.steps
    ctrl = make_controller(config, name)
    executor = None
    if name == "msnmpc" and config.threads > 1:
        executor = ThreadPoolExecutor(max_workers=config.threads)
        ctrl.executor = executor

    q0, qd0, _ = reference_trajectory(config.trajectory, 0.0)
    x_H = np.concatenate([q0, qd0])
    x_R = x_H.copy()
    vel_filter = MovingAverage(config.filter_window)
    force_filter = MovingAverage(config.filter_window)
    n_sc = len(config.hypotheses)
    rows = _Rows()
    aborted = False

    try:
        for k in range(K):
            t = k * dt
            unc = disturbance_models(t, config.mass_wobble, config.disturbance, config.sensor_noise)
            body_mass = (human_mass_at(t, config.duration, config.human_mass_start, config.human_mass_end)
                         if config.mass_ramp else config.human_mass_start)
            h_model = human_model(body_mass, dof, config.human_height)
            payload = payload_schedule(t) if payload_schedule is not None else config.true_payload
            plant = config.robot.with_payload(payload).with_mass_offset(unc.m_dis)

            human = JointState(x_H[:dof], x_H[dof:])
            robot = JointState(x_R[:dof], x_R[dof:])
            F_true = strap_forces(config.straps, human, robot)
            T_int = interaction_torques(config.straps, F_true, dof)

            # sensor side: encoder positions are exact, velocity/force are noisy and averaged
            qd_meas = vel_filter(robot.qd + unc.noise_qd)
            f_raw = np.array([F_true.F1, F_true.F2]) + unc.noise_F
            if dof == 1:
                f_raw[0] = 0.0
            if config.force_saturation is not None:
                f_raw = np.clip(f_raw, -config.force_saturation, config.force_saturation)
            f_meas = force_filter(f_raw)
            F_meas = InteractionForces(float(f_meas[0]), float(f_meas[1]))
            meas = JointState(robot.q, qd_meas)
            q_hat, qd_hat = estimate_human_state(meas, F_meas, config.estimator)
            T_int_meas = interaction_torques(config.straps, F_meas, dof)

            t0 = time.perf_counter()
            if name == "nmpc":
                T_R, result = ctrl.step(meas, q_hat, qd_hat)
                iters = result.iterations
                mu = np.full(n_sc, np.nan)
                D_hat = np.zeros((n_sc, dof))
            else:
                T_R, results = ctrl.step(meas, q_hat, qd_hat, T_int_meas)
                iters = sum(r.iterations for r in results)
                mu = ctrl.probabilities
                D_hat = ctrl.disturbance_estimates
            step_ms = (time.perf_counter() - t0) * 1e3 if config.record_timing else 0.0

            desired = reference_trajectory(config.trajectory, t)
            T_H = human_torque(h_model, human, desired, config.human_gains, T_int)

            rows.add(t=t, q_H=human.q, qd_H=human.qd, q_R=robot.q, qd_R=robot.qd, T_R=T_R, T_H=T_H,
                     F=[F_true.F1, F_true.F2], q_hat_H=q_hat, qd_hat_H=qd_hat, mu=mu, D_hat=D_hat,
                     sqp_iters=iters, step_ms=step_ms)

            x_R = robot_step(plant, x_R, T_R, T_int, np.full(dof, unc.D), dt)
            x_H = human_step(h_model, x_H, T_H, T_int, dt)
    except (IntegrationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("simulation aborted at t=%.3f: %s", k * dt, exc)
        aborted = True
    finally:
        if executor is not None:
            executor.shutdown()

    c = {key: np.array(v) for key, v in rows.cols.items()}
    if not c["t"].size:
        c = {key: np.zeros((0,)) for key in c}
    return SimLog(name, dof, float(config.true_payload), tuple(config.hypotheses), **c,
                  warnings=ctrl.warnings, aborted=aborted)


def run_controllers(config: SimConfig) -> dict[str, SimLog]:
    names = ("nmpc", "msnmpc") if config.controller == "both" else (config.controller,)
    return {name: run_simulation(config, name) for name in names}
