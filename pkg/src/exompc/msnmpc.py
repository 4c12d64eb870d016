"""
Multi-stage (scenario-based) robust NMPC.

Each scenario carries its own payload hypothesis, robot model, EKF and NMPC
warm start. Every control step the EKFs are updated against the measured
robot output, the scenario probabilities are re-weighted by the innovation
likelihoods, one NMPC per scenario is solved, and the first increments are
blended by probability.
"""

from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import JointState, LimbModel, accel_batch
from .nmpc import CONVERGED, ControlPlan, NmpcConfig, SqpResult, SqpSettings, gravity_torque, nmpc_step

Array = np.ndarray
log = logging.getLogger(__name__)

PROB_FLOOR = 1e-4


@dataclass(frozen=True)
class EkfSettings:
    """Noise levels (variances per step) for the disturbance-augmented EKF."""

    q_pos: float = 1e-6
    q_vel: float = 1e-4
    q_dist: float = 1e-4
    r_pos: float = 1e-6
    r_vel: float = 1e-3
    p0: float = 1e-2

    def Q(self, dof: int) -> Array:
        return np.diag([self.q_pos] * dof + [self.q_vel] * dof + [self.q_dist] * dof)

    def R(self, dof: int) -> Array:
        return np.diag([self.r_pos] * dof + [self.r_vel] * dof)


@dataclass
class EkfState:
    x: Array  # [q, qd, D]
    P: Array
    S: Array  # innovation covariance of the last update
    Q: Array
    R: Array

    @property
    def dof(self) -> int:
        return self.x.size // 3

    @property
    def q(self) -> Array:
        return self.x[: self.dof]

    @property
    def qd(self) -> Array:
        return self.x[self.dof: 2 * self.dof]

    @property
    def disturbance(self) -> Array:
        return self.x[2 * self.dof:]

    @classmethod
    def initial(cls, q: Array, qd: Array, settings: EkfSettings, D0: Optional[Array] = None) -> EkfState:
        n = np.size(q)
        D0 = np.zeros(n) if D0 is None else np.asarray(D0, dtype=float)
        x = np.concatenate([np.asarray(q, dtype=float), np.asarray(qd, dtype=float), D0])
        R = settings.R(n)
        return cls(x, settings.p0 * np.eye(3 * n), R.copy(), settings.Q(n), R)


@dataclass
class Scenario:
    payload_hypothesis: float
    model: LimbModel
    ekf: Optional[EkfState] = None
    probability: float = 1.0
    plan: Optional[ControlPlan] = None
    last_result: Optional[SqpResult] = None


@dataclass(frozen=True)
class MsSettings:
    c1: float = 100.0
    mu_floor: float = PROB_FLOOR
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    ekf: EkfSettings = field(default_factory=EkfSettings)
    sqp: SqpSettings = field(default_factory=SqpSettings)

    def __post_init__(self) -> None:
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")


def _transition_batch(model: LimbModel, X: Array, torque: Array, dt: float, width: float = 0.0) -> Array:
    """RK4 step of the augmented state ``[q, qd, D]`` for a batch of rows."""
    n = model.dof
    q, qd, D = X[:, :n], X[:, n:2 * n], X[:, 2 * n:]
    tau = torque - D
    a1 = accel_batch(model, q, qd, tau, coulomb_width=width)
    v2 = qd + 0.5 * dt * a1
    a2 = accel_batch(model, q + 0.5 * dt * qd, v2, tau, coulomb_width=width)
    v3 = qd + 0.5 * dt * a2
    a3 = accel_batch(model, q + 0.5 * dt * v2, v3, tau, coulomb_width=width)
    v4 = qd + dt * a3
    a4 = accel_batch(model, q + dt * v3, v4, tau, coulomb_width=width)
    out = np.empty_like(X)
    out[:, :n] = q + (dt / 6.0) * (qd + 2.0 * v2 + 2.0 * v3 + v4)
    out[:, n:2 * n] = qd + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    out[:, 2 * n:] = D
    return out


def _psd_floor(P: Array, floor: float = 1e-10) -> Array:
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w[0] < floor:
        log.debug("EKF covariance lost definiteness (min eig %.3g); flooring", w[0])
        P = (V * np.maximum(w, floor)) @ V.T
        P = 0.5 * (P + P.T)
    return P


def ekf_step(
    scenario: Scenario,
    T_applied: Array,
    y: Array,
    dt: float,
    external_torque: Optional[Array] = None,
    coulomb_width: float = 0.0,
) -> tuple[EkfState, Array, Array]:
    """Predict with the scenario model over one step, then correct with ``y = [q, qd]``.

    ``T_applied`` and ``external_torque`` (the measured strap torque) are the
    inputs held over the elapsed step. ``coulomb_width`` smooths the Coulomb
    term inside the finite-difference Jacobian only. Returns the new state, the innovation
    ``v = y - y_pred`` and its covariance ``S = H P- H' + R``.
    """
    ekf = scenario.ekf
    model = scenario.model
    n = model.dof
    nx = 3 * n
    torque = np.asarray(T_applied, dtype=float)
    if external_torque is not None:
        torque = torque + np.asarray(external_torque, dtype=float)

    h = 1e-6 * np.maximum(1.0, np.abs(ekf.x))
    X = np.repeat(ekf.x[None, :], 2 * nx + 1, axis=0)
    idx = np.arange(nx)
    X[1 + idx, idx] += h
    X[1 + nx + idx, idx] -= h
    # the mean uses the exact friction law, the Jacobian the smoothed one
    Xn = _transition_batch(model, X, torque, dt, coulomb_width)
    x_pred = _transition_batch(model, X[:1], torque, dt)[0] if coulomb_width > 0 else Xn[0]
    F = ((Xn[1:1 + nx] - Xn[1 + nx:]) / (2.0 * h[:, None])).T

    P_pred = F @ ekf.P @ F.T + ekf.Q
    P_pred = 0.5 * (P_pred + P_pred.T)
    m = 2 * n
    v = np.asarray(y, dtype=float) - x_pred[:m]
    S = P_pred[:m, :m] + ekf.R
    PHt = P_pred[:, :m]
    K = np.linalg.solve(S, PHt.T).T
    x_new = x_pred + K @ v
    IKH = np.eye(nx)
    IKH[:, :m] -= K
    P_new = IKH @ P_pred @ IKH.T + K @ ekf.R @ K.T
    P_new = _psd_floor(P_new)
    new = EkfState(x_new, P_new, S, ekf.Q, ekf.R)
    return new, v, S


def log_likelihood(v: Array, S: Array, c1: float) -> float:
    """Log of the scaled Gaussian innovation likelihood used for the belief update."""
    m = v.size
    maha = abs(c1 * float(v @ np.linalg.solve(S, v)))
    sign, logdet = np.linalg.slogdet(c1 * S)
    if sign <= 0:
        return -np.inf
    return -0.5 * maha - 0.5 * (m * np.log(2.0 * np.pi) + logdet)


def floor_and_renormalize(mu_hat: Array, floor: float = PROB_FLOOR) -> Array:
    """Raise entries to ``floor`` and rescale the rest so the vector sums to one."""
    mu_hat = np.asarray(mu_hat, dtype=float)
    fixed = np.zeros(mu_hat.size, dtype=bool)
    mu = mu_hat.copy()
    while True:
        fixed |= mu < floor
        free = ~fixed
        mu = np.where(fixed, floor, mu_hat)
        if free.any():
            mass = 1.0 - floor * fixed.sum()
            mu[free] = mu_hat[free] * (mass / mu_hat[free].sum())
        if not np.any(mu[free] < floor):
            return mu


def update_probabilities(
    prior: Array,
    innovations: Sequence[Array],
    S_list: Sequence[Array],
    c1: float = 100.0,
    floor: float = PROB_FLOOR,
) -> Array:
    """Bayesian re-weighting of scenario probabilities by innovation likelihood."""
    prior = np.asarray(prior, dtype=float)
    logl = np.array([log_likelihood(np.asarray(v, dtype=float), np.asarray(S, dtype=float), c1)
                     for v, S in zip(innovations, S_list)])
    logp = np.log(prior) + logl
    if not np.any(np.isfinite(logp)):
        log.warning("all scenario likelihoods vanished; keeping the prior")
        return floor_and_renormalize(prior / prior.sum(), floor)
    logp = np.where(np.isfinite(logp), logp, -np.inf)
    w = np.exp(logp - logp.max())
    mu_hat = w / w.sum()
    return floor_and_renormalize(mu_hat, floor)


def blend_increments(T_prev: Array, mu: Array, first_increments: Sequence[Array], cfg: NmpcConfig) -> Array:
    """Probability-weighted torque update, clamped to the torque limits."""
    inc = np.einsum("i,ij->j", np.asarray(mu, dtype=float), np.asarray(first_increments, dtype=float))
    inc = np.clip(inc, -cfg.dT_max, cfg.dT_max)
    return np.clip(np.asarray(T_prev, dtype=float) + inc, -cfg.T_max, cfg.T_max)


def make_scenarios(base_model: LimbModel, hypotheses: Sequence[float]) -> list[Scenario]:
    p = 1.0 / len(hypotheses)
    return [Scenario(float(m), base_model.with_payload(float(m)), probability=p) for m in hypotheses]


def _solve_scenario(args):
    sc, state, q_hat_H, qd_hat_H, T_prev, settings, disturbance = args
    start = sc.plan.shifted() if sc.plan is not None else None
    return nmpc_step(state, q_hat_H, qd_hat_H, T_prev, sc.model, settings.nmpc, settings.sqp, start, disturbance)


def msnmpc_step(
    scenarios: Sequence[Scenario],
    y: Array,
    q_hat_H: Array,
    qd_hat_H: Array,
    T_prev: Array,
    settings: MsSettings,
    external_torque: Optional[Array] = None,
    executor: Optional[Executor] = None,
) -> tuple[Array, list[ControlPlan], Array]:
    """One multi-stage control step; mutates the scenarios' EKFs, plans and probabilities.

    ``external_torque`` is the measured strap torque that acted over the step
    that just ended. On the first call (EKFs uninitialised) the filters are
    seeded from ``y`` and the probabilities are left unchanged.
    """
    y = np.asarray(y, dtype=float)
    n = scenarios[0].model.dof
    dt = settings.nmpc.dt

    if scenarios[0].ekf is None:
        for sc in scenarios:
            sc.ekf = EkfState.initial(y[:n], y[n:], settings.ekf)
    else:
        innovations, S_list = [], []
        for sc in scenarios:
            sc.ekf, v, S = ekf_step(sc, T_prev, y, dt, external_torque, settings.nmpc.coulomb_width)
            innovations.append(v)
            S_list.append(S)
        prior = np.array([sc.probability for sc in scenarios])
        mu = update_probabilities(prior, innovations, S_list, settings.c1, settings.mu_floor)
        for sc, p in zip(scenarios, mu):
            sc.probability = float(p)

    jobs = [
        (sc, JointState(sc.ekf.q, sc.ekf.qd), q_hat_H, qd_hat_H, T_prev, settings, sc.ekf.disturbance)
        for sc in scenarios
    ]
    results = list(executor.map(_solve_scenario, jobs)) if executor is not None else [_solve_scenario(j) for j in jobs]

    plans = []
    for sc, (_, plan, res) in zip(scenarios, results):
        sc.plan = plan
        sc.last_result = res
        plans.append(plan)
    mu = np.array([sc.probability for sc in scenarios])
    T_applied = blend_increments(T_prev, mu, [p.dT[0] for p in plans], settings.nmpc)
    return T_applied, plans, mu


@dataclass
class MultiStageController:
    """Stateful multi-stage NMPC controller.

    Only nominal robot parameters and the payload hypotheses are held here;
    the plant's true payload and disturbances never reach this object.
    """

    base_model: LimbModel
    hypotheses: Sequence[float] = (0.0, 1.0, 2.0)
    settings: MsSettings = field(default_factory=MsSettings)
    executor: Optional[Executor] = None
    scenarios: list[Scenario] = field(default_factory=list)
    T_prev: Optional[Array] = None
    warnings: int = 0
    _prev_external: Optional[Array] = None

    def reset(self, q0: Array) -> None:
        self.scenarios = make_scenarios(self.base_model, self.hypotheses)
        mu = np.array([sc.probability for sc in self.scenarios])
        G = sum(p * gravity_torque(sc.model, q0) for p, sc in zip(mu, self.scenarios))
        self.T_prev = np.clip(G, -self.settings.nmpc.T_max, self.settings.nmpc.T_max)
        self.warnings = 0
        self._prev_external = None

    @property
    def probabilities(self) -> Array:
        return np.array([sc.probability for sc in self.scenarios])

    @property
    def disturbance_estimates(self) -> Array:
        return np.array([sc.ekf.disturbance for sc in self.scenarios])

    def step(
        self,
        state: JointState,
        q_hat_H: Array,
        qd_hat_H: Array,
        external_torque: Optional[Array] = None,
    ) -> tuple[Array, list[SqpResult]]:
        if self.T_prev is None or not self.scenarios:
            self.reset(state.q)
        y = state.as_vector()
        T, _, _ = msnmpc_step(
            self.scenarios, y, q_hat_H, qd_hat_H, self.T_prev, self.settings,
            self._prev_external, self.executor,
        )
        self._prev_external = None if external_torque is None else np.asarray(external_torque, dtype=float).copy()
        results = [sc.last_result for sc in self.scenarios]
        self.warnings += sum(r.status != CONVERGED for r in results)
        self.T_prev = T
        return T, results
