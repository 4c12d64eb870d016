"""
Non-robust NMPC for the exoskeleton.

Decision variables are the torque increments over the control horizon,
flattened row-major from an ``(N_c, dof)`` array. Predictions run the robot
model with RK4, torques held constant over each step and after ``N_c``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .dynamics import ConfigurationError, JointState, LimbModel, accel_batch, compute_terms
from .optimizer import CONVERGED, NlpProblem, SqpResult, SqpSettings, sqp_solve

Array = np.ndarray
log = logging.getLogger(__name__)

FD_STEP = 1e-6


@dataclass(frozen=True)
class NmpcConfig:
    N_p: int = 3
    N_c: int = 3
    r_d: float = 0.1
    r_t: float = 1e-6
    dt: float = 0.01
    T_max: float = 30.0
    dT_max: float = 10.0
    coulomb_width: float = 0.01  # rad/s, smoothing of the predicted Coulomb term

    def __post_init__(self) -> None:
        if not 1 <= self.N_c <= self.N_p:
            raise ConfigurationError("need 1 <= N_c <= N_p")
        if self.r_d < 0 or self.r_t < 0:
            raise ConfigurationError("weights must be non-negative")
        if self.coulomb_width < 0:
            raise ConfigurationError("coulomb_width must be non-negative")
        if not (self.dt > 0 and self.T_max > 0 and self.dT_max > 0):
            raise ConfigurationError("dt and torque limits must be positive")


@dataclass
class ControlPlan:
    dT: Array  # (N_c, dof)

    def shifted(self) -> ControlPlan:
        """Drop the applied increment and append a zero one."""
        nxt = np.zeros_like(self.dT)
        nxt[:-1] = self.dT[1:]
        return ControlPlan(nxt)

    @classmethod
    def zeros(cls, cfg: NmpcConfig, dof: int) -> ControlPlan:
        return cls(np.zeros((cfg.N_c, dof)))


class HorizonReference(NamedTuple):
    q_ref: Array  # (N_p, dof)
    qd_ref: Array  # (N_p, dof)


class Prediction(NamedTuple):
    q: Array  # (N_p, dof)
    qd: Array


def build_reference(q_hat_H: Array, qd_hat_H: Array, cfg: NmpcConfig) -> HorizonReference:
    """Constant-velocity extrapolation of the estimated human state."""
    q_hat_H = np.atleast_1d(np.asarray(q_hat_H, dtype=float))
    qd_hat_H = np.atleast_1d(np.asarray(qd_hat_H, dtype=float))
    j = np.arange(1, cfg.N_p + 1)[:, None]
    q_ref = q_hat_H[None, :] + j * cfg.dt * qd_hat_H[None, :]
    qd_ref = np.repeat(qd_hat_H[None, :], cfg.N_p, axis=0)
    return HorizonReference(q_ref, qd_ref)


def _torque_schedule(T_prev: Array, dT: Array, N_p: int) -> Array:
    """Torques applied over each prediction step, for a batch of plans.

    ``dT`` has shape ``(B, N_c, dof)``; the result is ``(B, N_p, dof)``.
    """
    cum = T_prev + np.cumsum(dT, axis=1)
    N_c = dT.shape[1]
    if N_p > N_c:
        tail = np.repeat(cum[:, -1:, :], N_p - N_c, axis=1)
        cum = np.concatenate([cum, tail], axis=1)
    return cum


def rollout_batch(
    model: LimbModel,
    q0: Array,
    qd0: Array,
    T_prev: Array,
    dT: Array,
    cfg: NmpcConfig,
    disturbance: Optional[Array] = None,
) -> tuple[Array, Array]:
    """Predicted ``(q, qd)`` for a batch of plans, each of shape ``(B, N_p, dof)``."""
    dT = np.asarray(dT, dtype=float)
    B, _, n = dT.shape
    torques = _torque_schedule(np.asarray(T_prev, dtype=float), dT, cfg.N_p)
    if disturbance is not None:
        torques = torques - np.asarray(disturbance, dtype=float)
    q = np.broadcast_to(np.asarray(q0, dtype=float), (B, n)).copy()
    qd = np.broadcast_to(np.asarray(qd0, dtype=float), (B, n)).copy()
    h, w = cfg.dt, cfg.coulomb_width
    q_out = np.empty((B, cfg.N_p, n))
    qd_out = np.empty((B, cfg.N_p, n))
    with np.errstate(all="ignore"):
        for j in range(cfg.N_p):
            tau = torques[:, j, :]
            a1 = accel_batch(model, q, qd, tau, coulomb_width=w)
            v2 = qd + 0.5 * h * a1
            a2 = accel_batch(model, q + 0.5 * h * qd, v2, tau, coulomb_width=w)
            v3 = qd + 0.5 * h * a2
            a3 = accel_batch(model, q + 0.5 * h * v2, v3, tau, coulomb_width=w)
            v4 = qd + h * a3
            a4 = accel_batch(model, q + h * v3, v4, tau, coulomb_width=w)
            q = q + (h / 6.0) * (qd + 2.0 * v2 + 2.0 * v3 + v4)
            qd = qd + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            q_out[:, j] = q
            qd_out[:, j] = qd
    return q_out, qd_out


def predict_horizon(
    model: LimbModel,
    state: JointState,
    T_prev: Array,
    plan: ControlPlan,
    cfg: NmpcConfig,
    disturbance: Optional[Array] = None,
) -> Prediction:
    """Predicted robot states over the horizon for one plan (no strap torque)."""
    q, qd = rollout_batch(model, state.q, state.qd, T_prev, plan.dT[None], cfg, disturbance)
    return Prediction(q[0], qd[0])


def nmpc_cost(predicted: Prediction, reference: HorizonReference, plan: ControlPlan, cfg: NmpcConfig) -> float:
    pos = np.sum((predicted.q - reference.q_ref) ** 2)
    vel = np.sum((predicted.qd - reference.qd_ref) ** 2)
    effort = np.sum(plan.dT**2)
    return float(pos + cfg.r_d * vel + cfg.r_t * effort)


def _batch_cost(q: Array, qd: Array, dT: Array, ref: HorizonReference, cfg: NmpcConfig) -> Array:
    pos = np.sum((q - ref.q_ref) ** 2, axis=(1, 2))
    vel = np.sum((qd - ref.qd_ref) ** 2, axis=(1, 2))
    effort = np.sum(dT**2, axis=(1, 2))
    cost = pos + cfg.r_d * vel + cfg.r_t * effort
    return np.where(np.isfinite(cost), cost, np.inf)


def constraint_matrices(T_prev: Array, cfg: NmpcConfig, dof: int) -> tuple[Array, Array]:
    """``A x <= b`` encoding ``|T_prev + cumulative increments| <= T_max``."""
    lower = np.kron(np.tril(np.ones((cfg.N_c, cfg.N_c))), np.eye(dof))
    T_prev = np.asarray(T_prev, dtype=float)
    rep = np.tile(T_prev, cfg.N_c)
    A = np.vstack([lower, -lower])
    b = np.concatenate([cfg.T_max - rep, cfg.T_max + rep])
    return A, b


class _RolloutProblem:
    """Objective, gradient and Gauss-Newton Hessian of one NMPC instance."""

    def __init__(self, model, state, T_prev, reference, cfg, disturbance):
        self.model = model
        self.q0, self.qd0 = state.q, state.qd
        self.T_prev = np.asarray(T_prev, dtype=float)
        self.ref = reference
        self.cfg = cfg
        self.D = disturbance
        self.dof = state.dof
        self.n = cfg.N_c * self.dof
        self._cache: dict[bytes, Array] = {}

    def _plans(self, X: Array) -> Array:
        return X.reshape(-1, self.cfg.N_c, self.dof)

    def objective(self, x: Array) -> float:
        dT = self._plans(x)
        q, qd = rollout_batch(self.model, self.q0, self.qd0, self.T_prev, dT, self.cfg, self.D)
        return float(_batch_cost(q, qd, dT, self.ref, self.cfg)[0])

    def _perturbed(self, x: Array) -> tuple[Array, Array, Array]:
        n = self.n
        X = np.repeat(x[None, :], 2 * n, axis=0)
        idx = np.arange(n)
        X[idx, idx] += FD_STEP
        X[n + idx, idx] -= FD_STEP
        dT = self._plans(X)
        q, qd = rollout_batch(self.model, self.q0, self.qd0, self.T_prev, dT, self.cfg, self.D)
        return dT, q, qd

    def gradient(self, x: Array) -> Array:
        key = x.tobytes()
        if key in self._cache:
            return self._cache[key]
        dT, q, qd = self._perturbed(x)
        c = _batch_cost(q, qd, dT, self.ref, self.cfg)
        n = self.n
        return (c[:n] - c[n:]) / (2.0 * FD_STEP)

    def gauss_newton(self, x: Array) -> Array:
        """GN Hessian of the least-squares cost; also caches the gradient at x."""
        n, cfg = self.n, self.cfg
        dT, q, qd = self._perturbed(x)
        c = _batch_cost(q, qd, dT, self.ref, cfg)
        self._cache[x.tobytes()] = (c[:n] - c[n:]) / (2.0 * FD_STEP)
        Jq = (q[:n] - q[n:]).reshape(n, -1) / (2.0 * FD_STEP)
        Jv = (qd[:n] - qd[n:]).reshape(n, -1) / (2.0 * FD_STEP)
        H = 2.0 * (Jq @ Jq.T + cfg.r_d * Jv @ Jv.T) + 2.0 * cfg.r_t * np.eye(n)
        if not np.all(np.isfinite(H)):
            return np.eye(n)
        return H


def nmpc_step(
    state: JointState,
    q_hat_H: Array,
    qd_hat_H: Array,
    T_prev: Array,
    model: LimbModel,
    cfg: NmpcConfig,
    settings: Optional[SqpSettings] = None,
    warm_start: Optional[ControlPlan] = None,
    disturbance: Optional[Array] = None,
) -> tuple[Array, ControlPlan, SqpResult]:
    """Solve one receding-horizon problem and return the first torque.

    ``warm_start`` is used as the SQP starting plan as given; callers pass
    the previous plan already shifted. ``disturbance`` is the lumped
    disturbance assumed constant over the horizon (zero if None).
    """
    if state.dof != model.dof:
        raise ConfigurationError("state and model dof differ")
    settings = settings or SqpSettings()
    dof = model.dof
    T_prev = np.asarray(T_prev, dtype=float)
    ref = build_reference(q_hat_H, qd_hat_H, cfg)
    prob = _RolloutProblem(model, state, T_prev, ref, cfg, disturbance)
    A, b = constraint_matrices(T_prev, cfg, dof)
    x0 = np.zeros(prob.n) if warm_start is None else np.asarray(warm_start.dT, dtype=float).reshape(-1)
    x0 = np.clip(x0, -cfg.dT_max, cfg.dT_max)
    if np.any(A @ x0 > b):
        x0 = np.zeros(prob.n)
    problem = NlpProblem(
        prob.n,
        prob.objective,
        prob.gradient,
        A,
        b,
        lo=-cfg.dT_max,
        hi=cfg.dT_max,
        initial_hessian=prob.gauss_newton(x0),
    )
    result = sqp_solve(problem, x0, settings)
    plan = ControlPlan(result.x_star.reshape(cfg.N_c, dof).copy())
    T_applied = np.clip(T_prev + plan.dT[0], -cfg.T_max, cfg.T_max)
    return T_applied, plan, result


def gravity_torque(model: LimbModel, q: Array) -> Array:
    return compute_terms(model, JointState(q)).G


@dataclass
class NmpcController:
    """Receding-horizon wrapper holding the warm start and the last torque."""

    model: LimbModel
    cfg: NmpcConfig = field(default_factory=NmpcConfig)
    settings: SqpSettings = field(default_factory=SqpSettings)
    warm_start: bool = True
    T_prev: Optional[Array] = None
    plan: Optional[ControlPlan] = None
    warnings: int = 0

    def reset(self, q0: Array) -> None:
        self.T_prev = np.clip(gravity_torque(self.model, q0), -self.cfg.T_max, self.cfg.T_max)
        self.plan = None
        self.warnings = 0

    def step(
        self,
        state: JointState,
        q_hat_H: Array,
        qd_hat_H: Array,
        disturbance: Optional[Array] = None,
    ) -> tuple[Array, SqpResult]:
        if self.T_prev is None:
            self.reset(state.q)
        start = self.plan.shifted() if (self.warm_start and self.plan is not None) else None
        T, plan, result = nmpc_step(
            state, q_hat_H, qd_hat_H, self.T_prev, self.model, self.cfg, self.settings, start, disturbance
        )
        if result.status != CONVERGED:
            self.warnings += 1
            log.debug("NMPC solve ended with status %s", result.status)
        self.plan = plan
        self.T_prev = T
        return T, result
