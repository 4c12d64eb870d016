"""Numerical invariant checks runnable from the command line.

Each check returns a :class:`CheckResult`; :func:`run_selftest` prints one
line per check and reports whether all of them passed.
"""

from __future__ import annotations

import itertools
from typing import Callable, NamedTuple

import numpy as np

from .dynamics import (
    JointState,
    LimbModel,
    LinkParams,
    compute_terms,
    default_robot_model,
    human_model,
    mechanical_energy,
    rk4_step,
    robot_step,
)
from .msnmpc import EkfSettings, EkfState, Scenario, ekf_step, update_probabilities
from .optimizer import NlpProblem, SqpSettings, solve_qp, sqp_solve


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _random_model(rng: np.random.Generator) -> LimbModel:
    links = tuple(
        LinkParams(rng.uniform(0.5, 10), L, rng.uniform(0.1, 0.9) * L, rng.uniform(0.005, 0.3))
        for L in rng.uniform(0.2, 0.6, 2)
    )
    return LimbModel(links, payload_mass=rng.uniform(0, 3))


def check_mass_matrix(samples: int = 1000, seed: int = 0) -> CheckResult:
    """M(q) symmetric positive definite on random models and states."""
    rng = np.random.default_rng(seed)
    worst_asym, min_eig = 0.0, np.inf
    for _ in range(samples):
        model = _random_model(rng)
        M = compute_terms(model, JointState(rng.uniform(-np.pi, np.pi, 2), rng.normal(size=2))).M
        worst_asym = max(worst_asym, float(np.abs(M - M.T).max()))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(M)[0]))
    ok = worst_asym == 0.0 and min_eig > 0.0
    return CheckResult("mass matrix symmetric PD", ok, f"max asym {worst_asym:.1e}, min eig {min_eig:.3e}")


def check_skew_symmetry(samples: int = 200, seed: int = 1, tol: float = 1e-8) -> CheckResult:
    """xi'(Mdot - 2C)xi = 0 with Mdot from central differences along qd."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    h = 1e-6
    for _ in range(samples):
        model = _random_model(rng)
        q, qd = rng.uniform(-np.pi, np.pi, 2), rng.normal(size=2) * 2
        Mp = compute_terms(model, JointState(q + h * qd)).M
        Mm = compute_terms(model, JointState(q - h * qd)).M
        N = (Mp - Mm) / (2 * h) - 2.0 * compute_terms(model, JointState(q, qd)).C
        worst = max(worst, float(np.abs(N + N.T).max()))
    return CheckResult("Mdot - 2C skew-symmetric", worst <= tol, f"max |N + N'| {worst:.1e}")


def check_energy(duration: float = 1.0, dt: float = 1e-4, tol: float = 1e-6) -> CheckResult:
    """Relative energy drift of the unforced, frictionless double pendulum."""
    model = LimbModel(default_robot_model().links)
    x = np.array([0.8, -0.4, 0.5, 1.0])
    zero = np.zeros(2)
    e0 = mechanical_energy(model, JointState(x[:2], x[2:]))
    drift = 0.0
    for _ in range(int(round(duration / dt))):
        x = robot_step(model, x, zero, zero, zero, dt)
        e = mechanical_energy(model, JointState(x[:2], x[2:]))
        drift = max(drift, abs(e - e0) / abs(e0))
    return CheckResult("energy drift", drift <= tol, f"relative drift {drift:.1e}")


def rk4_order(dts=(0.04, 0.02, 0.01, 0.005), horizon: float = 1.0) -> float:
    """Observed global order on x' = -x + sin(t) written autonomously."""

    def f(z):
        return np.array([-z[0] + np.sin(z[1]), 1.0])

    exact = lambda t: 1.5 * np.exp(-t) + 0.5 * (np.sin(t) - np.cos(t))  # noqa: E731
    errs = []
    for dt in dts:
        z = np.array([1.0, 0.0])
        for _ in range(int(round(horizon / dt))):
            z = rk4_step(f, z, dt)
        errs.append(abs(z[0] - exact(horizon)))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    return float(slope)


def check_rk4_order(tol: float = 0.1) -> CheckResult:
    p = rk4_order()
    return CheckResult("RK4 order", abs(p - 4.0) <= tol, f"observed order {p:.3f}")


def box_qp_oracle(H: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Enumerate every lower/free/upper pattern and keep the best feasible stationary point."""
    n = g.size
    best_f, best_x = np.inf, None
    for pattern in itertools.product((-1, 0, 1), repeat=n):
        x = np.zeros(n)
        fixed = [i for i in range(n) if pattern[i]]
        free = [i for i in range(n) if not pattern[i]]
        for i in fixed:
            x[i] = lo[i] if pattern[i] < 0 else hi[i]
        if free:
            rhs = -(g[free] + H[np.ix_(free, fixed)] @ x[fixed])
            x[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
        if np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12):
            f = 0.5 * x @ H @ x + g @ x
            if f < best_f:
                best_f, best_x = f, x
    return best_x


def random_box_qp(rng: np.random.Generator, n: int = 4):
    B = rng.normal(size=(n, n))
    H = B @ B.T + 0.1 * np.eye(n)
    g = rng.normal(size=n) * 3
    return H, g, -rng.uniform(0.1, 2.0, n), rng.uniform(0.1, 2.0, n)


def check_qp_oracle(cases: int = 100, seed: int = 2, tol: float = 1e-8) -> CheckResult:
    """QP and SQP solutions against the enumeration oracle on random box QPs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    settings = SqpSettings(max_iterations=50, kkt_tolerance=1e-12)
    for _ in range(cases):
        H, g, lo, hi = random_box_qp(rng)
        ref = box_qp_oracle(H, g, lo, hi)
        qp = solve_qp(H, g, lo=lo, hi=hi)
        nlp = NlpProblem(4, lambda x: 0.5 * x @ H @ x + g @ x, lambda x: H @ x + g, lo=lo, hi=hi, initial_hessian=H)
        res = sqp_solve(nlp, np.zeros(4), settings)
        worst = max(worst, float(np.abs(qp.x - ref).max()), float(np.abs(res.x_star - ref).max()))
    return CheckResult("QP/SQP vs enumeration oracle", worst <= tol, f"max deviation {worst:.1e}")


def check_ekf_disturbance(D_true: float = 0.5, within: float = 2.0, tol: float = 0.05) -> CheckResult:
    """Known constant disturbance on a matched 1-DOF plant is recovered."""
    model = default_robot_model(1)
    dt = 0.01
    x = np.array([0.3, 0.0])
    sc = Scenario(0.0, model, EkfState.initial(x[:1], x[1:], EkfSettings()))
    D = np.array([D_true])
    for k in range(int(round(within / dt))):
        T = np.array([1.0 + 2.0 * np.sin(2.0 * k * dt)])
        x = robot_step(model, x, T, np.zeros(1), D, dt)
        sc.ekf, _, _ = ekf_step(sc, T, x, dt)
    est = float(sc.ekf.disturbance[0])
    return CheckResult("EKF disturbance recovery", abs(est - D_true) <= tol, f"estimate {est:.4f} N m")


def check_simplex(steps: int = 2000, seed: int = 3) -> CheckResult:
    """Beliefs stay on the floored simplex under arbitrary innovations."""
    rng = np.random.default_rng(seed)
    mu = np.full(3, 1.0 / 3.0)
    worst_sum, worst_min = 0.0, 1.0
    for _ in range(steps):
        scale = 10.0 ** rng.uniform(-3, 1)
        v = [rng.normal(size=4) * scale * (i + 1) for i in range(3)]
        S = [np.diag(rng.uniform(1e-4, 1e-2, 4)) for _ in range(3)]
        mu = update_probabilities(mu, v, S, 100.0)
        worst_sum = max(worst_sum, abs(mu.sum() - 1.0))
        worst_min = min(worst_min, float(mu.min()))
    ok = worst_sum <= 1e-12 and worst_min >= 1e-4
    return CheckResult("probability simplex", ok, f"max |sum - 1| {worst_sum:.1e}, min mu {worst_min:.2e}")


def check_hand_example() -> CheckResult:
    mu = update_probabilities(np.array([0.5, 0.5]), [np.zeros(1), np.ones(1)], [np.eye(1)] * 2, 1.0)
    expected = 1.0 / (1.0 + np.exp(-0.5))
    err = abs(mu[0] - expected)
    return CheckResult("belief update hand example", err <= 1e-6, f"mu_1 = {mu[0]:.7f}")


def check_human_model() -> CheckResult:
    """Anthropometric human leg model is a valid limb at both ends of the mass ramp."""
    ok = True
    for mass in (60.0, 85.0):
        M = compute_terms(human_model(mass), JointState(np.array([0.2, 0.4]))).M
        ok &= bool(np.linalg.eigvalsh(M)[0] > 0)
    return CheckResult("human leg model", ok, "M positive definite at 60 and 85 kg")


CHECKS: tuple[Callable[[], CheckResult], ...] = (
    check_mass_matrix,
    check_skew_symmetry,
    check_energy,
    check_rk4_order,
    check_qp_oracle,
    check_ekf_disturbance,
    check_simplex,
    check_hand_example,
    check_human_model,
)


def run_selftest(echo: Callable[[str], None] = print) -> bool:
    all_ok = True
    for check in CHECKS:
        res = check()
        all_ok &= res.passed
        echo(f"{'PASS' if res.passed else 'FAIL'}  {res.name}: {res.detail}")
    return all_ok
