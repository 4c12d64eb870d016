"""
Dense small-scale SQP with a primal active-set QP subsolver.

Problems have the form

    min f(x)   s.t.   A x <= b,   lo <= x <= hi

with smooth f. Only linear constraints are supported, which keeps every
iterate feasible once the starting point is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

Array = np.ndarray
log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
QP_INFEASIBLE = "qp_infeasible"


class QpSolution(NamedTuple):
    x: Array
    multipliers: Array  # one per row of A, >= 0
    lam_upper: Array  # bound multipliers for x <= hi
    lam_lower: Array  # bound multipliers for x >= lo
    status: str
    iterations: int


def _regularize(H: Array, floor: float = 1e-8) -> Array:
    H = 0.5 * (H + H.T)
    lam_min = np.linalg.eigvalsh(H)[0] if H.size else 0.0
    if lam_min < floor:
        H = H + (floor - lam_min) * np.eye(H.shape[0])
    return H


def _as_bounds(v: Optional[Array], n: int, fill: float) -> Array:
    if v is None:
        return np.full(n, fill)
    return np.broadcast_to(np.asarray(v, dtype=float), (n,)).astype(float)


def solve_qp(
    H: Array,
    g: Array,
    A: Optional[Array] = None,
    b: Optional[Array] = None,
    lo: Optional[Array] = None,
    hi: Optional[Array] = None,
    max_iter: int = 200,
) -> QpSolution:
    """Convex QP ``min 1/2 x'Hx + g'x`` by the primal active-set method.

    The iteration starts from ``clip(0, lo, hi)``; if that point violates
    ``A x <= b`` the problem is reported as ``qp_infeasible``.
    """
    g = np.asarray(g, dtype=float)
    n = g.size
    H = _regularize(np.asarray(H, dtype=float).reshape(n, n))
    A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
    lo = _as_bounds(lo, n, -np.inf)
    hi = _as_bounds(hi, n, np.inf)
    m = A.shape[0]

    # stacked constraints: A x <= b, x_i <= hi_i, -x_i <= -lo_i
    up_idx = np.flatnonzero(np.isfinite(hi))
    lo_idx = np.flatnonzero(np.isfinite(lo))
    eye = np.eye(n)
    Cmat = np.vstack([A, eye[up_idx], -eye[lo_idx]])
    d = np.concatenate([b, hi[up_idx], -lo[lo_idx]])
    n_con = Cmat.shape[0]

    def unpack(lam: Array) -> tuple[Array, Array, Array]:
        lam_u = np.zeros(n)
        lam_l = np.zeros(n)
        lam_u[up_idx] = lam[m:m + up_idx.size]
        lam_l[lo_idx] = lam[m + up_idx.size:]
        return lam[:m], lam_u, lam_l

    x = np.clip(np.zeros(n), lo, hi)
    scale = max(1.0, float(np.max(np.abs(d), initial=0.0)))
    feas_tol = 1e-12 * scale
    if np.any(lo > hi) or (m and np.any(A @ x > b + feas_tol)):
        lam_a, lam_u, lam_l = unpack(np.zeros(n_con))
        return QpSolution(x, lam_a, lam_u, lam_l, QP_INFEASIBLE, 0)

    working: list[int] = []
    for i in range(n_con):
        if abs(Cmat[i] @ x - d[i]) <= feas_tol:
            trial = working + [i]
            if np.linalg.matrix_rank(Cmat[trial]) == len(trial):
                working = trial

    g_scale = max(float(np.max(np.abs(g), initial=0.0)), float(np.max(np.abs(H), initial=0.0)), 1e-300)
    lam_full = np.zeros(n_con)
    # after an unblocked full step x minimises over the working set, so the
    # next solve only supplies multipliers (its p is round-off)
    subspace_min = False
    for it in range(1, max_iter + 1):
        grad = H @ x + g
        k = len(working)
        Cw = Cmat[working]
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = H
        kkt[:n, n:] = Cw.T
        kkt[n:, :n] = Cw
        rhs = np.concatenate([-grad, np.zeros(k)])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p, lam_w = sol[:n], sol[n:]

        if subspace_min or np.max(np.abs(p), initial=0.0) <= 1e-13 * (1.0 + np.max(np.abs(x), initial=0.0)):
            subspace_min = False
            if k == 0 or lam_w.min() >= -1e-12 * g_scale:
                lam_full[:] = 0.0
                lam_full[working] = np.maximum(lam_w, 0.0)
                lam_a, lam_u, lam_l = unpack(lam_full)
                return QpSolution(x, lam_a, lam_u, lam_l, CONVERGED, it)
            working.pop(int(np.argmin(lam_w)))
            continue

        alpha = 1.0
        blocking = -1
        Cp = Cmat @ p
        slack = d - Cmat @ x
        in_w = np.zeros(n_con, dtype=bool)
        in_w[working] = True
        for i in np.flatnonzero((Cp > 0) & ~in_w):
            step = max(slack[i], 0.0) / Cp[i]
            if step < alpha:
                alpha, blocking = step, i
        x = x + alpha * p
        if blocking >= 0:
            working.append(int(blocking))
        else:
            subspace_min = True

    log.warning("active-set QP hit its iteration limit")
    lam_a, lam_u, lam_l = unpack(lam_full)
    return QpSolution(x, lam_a, lam_u, lam_l, MAX_ITERATIONS, max_iter)


@dataclass
class NlpProblem:
    """Smooth objective with linear inequality constraints and simple bounds.

    ``gradient`` may be omitted, in which case central differences are used.
    ``initial_hessian`` seeds the quasi-Newton approximation (identity if None).
    """

    n: int
    objective: Callable[[Array], float]
    gradient: Optional[Callable[[Array], Array]] = None
    A: Optional[Array] = None
    b: Optional[Array] = None
    lo: Optional[Array] = None
    hi: Optional[Array] = None
    initial_hessian: Optional[Array] = None

    def __post_init__(self) -> None:
        self.A = np.zeros((0, self.n)) if self.A is None else np.asarray(self.A, dtype=float).reshape(-1, self.n)
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b row counts differ")
        self.lo = _as_bounds(self.lo, self.n, -np.inf)
        self.hi = _as_bounds(self.hi, self.n, np.inf)
        if np.any(self.lo > self.hi):
            raise ValueError("lo must not exceed hi")

    def grad(self, x: Array) -> Array:
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        return finite_difference_gradient(self.objective, x)


@dataclass
class SqpSettings:
    max_iterations: int = 30
    kkt_tolerance: float = 1e-6
    step_tolerance: float = 1e-9
    armijo: float = 1e-4
    max_backtracks: int = 30


@dataclass
class SqpResult:
    x_star: Array
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    merit_history: list[float] = field(default_factory=list)


def finite_difference_gradient(f: Callable[[Array], float], x: Array, h: float = 1e-6) -> Array:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def check_gradient(problem: NlpProblem, x: Array, h: float = 1e-6) -> float:
    """Largest relative mismatch between the supplied and a central-difference gradient."""
    analytic = problem.grad(x)
    numeric = finite_difference_gradient(problem.objective, x, h)
    denom = np.maximum(np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _kkt_residual(problem: NlpProblem, x: Array, g: Array, qp: QpSolution) -> float:
    A, b, lo, hi = problem.A, problem.b, problem.lo, problem.hi
    stat = g + A.T @ qp.multipliers + qp.lam_upper - qp.lam_lower
    res = float(np.max(np.abs(stat), initial=0.0))
    if A.shape[0]:
        viol = A @ x - b
        res = max(res, float(np.max(viol, initial=0.0)), float(np.max(np.abs(qp.multipliers * viol), initial=0.0)))
    up = np.where(np.isfinite(hi), x - hi, 0.0)
    dn = np.where(np.isfinite(lo), lo - x, 0.0)
    res = max(res, float(np.max(np.abs(qp.lam_upper * up), initial=0.0)))
    res = max(res, float(np.max(np.abs(qp.lam_lower * dn), initial=0.0)))
    return res


def _bfgs_update(B: Array, s: Array, y: Array) -> Array:
    """Powell-damped BFGS update; keeps B positive definite."""
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 1e-300:
        return B
    sy = float(s @ y)
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        r = theta * y + (1.0 - theta) * Bs
    else:
        r = y
    sr = float(s @ r)
    if sr <= 1e-300:
        return B
    B_new = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / sr
    B_new = 0.5 * (B_new + B_new.T)
    try:
        np.linalg.cholesky(B_new)
    except np.linalg.LinAlgError:
        return B
    return B_new


def sqp_solve(problem: NlpProblem, x0: Array, settings: Optional[SqpSettings] = None) -> SqpResult:
    """Damped-BFGS SQP with backtracking on an l1 merit function."""
    settings = settings or SqpSettings()
    A, b, lo, hi = problem.A, problem.b, problem.lo, problem.hi
    n = problem.n

    x = np.clip(np.asarray(x0, dtype=float).reshape(n), lo, hi)
    if A.shape[0] and np.any(A @ x > b + 1e-12):
        # project the infeasible start onto the feasible set
        proj = solve_qp(np.eye(n), -x, A, b, lo, hi)
        if proj.status == QP_INFEASIBLE:
            return SqpResult(x, float(problem.objective(x)), np.inf, 0, QP_INFEASIBLE)
        x = proj.x

    penalty = 0.0

    def merit(z: Array, fz: float) -> float:
        viol = float(np.sum(np.maximum(A @ z - b, 0.0))) if A.shape[0] else 0.0
        return fz + penalty * viol

    f = float(problem.objective(x))
    g = problem.grad(x)
    B = np.eye(n) if problem.initial_hessian is None else _regularize(np.asarray(problem.initial_hessian, dtype=float))
    history = [f]
    status = MAX_ITERATIONS
    kkt = np.inf
    iterations = 0

    for iterations in range(1, settings.max_iterations + 1):
        qp = solve_qp(B, g, A, b - A @ x, lo - x, hi - x)
        if qp.status == QP_INFEASIBLE:
            status = QP_INFEASIBLE
            break
        d = qp.x
        if np.max(np.abs(d), initial=0.0) <= settings.step_tolerance:
            kkt = _kkt_residual(problem, x, g, qp)
            status = CONVERGED
            break

        lam_max = float(np.max(np.abs(qp.multipliers), initial=0.0))
        penalty = max(penalty, 1.1 * lam_max)
        m0 = merit(x, f)
        slope = float(g @ d)
        alpha = 1.0
        accepted = False
        for _ in range(settings.max_backtracks):
            x_try = x + alpha * d
            f_try = float(problem.objective(x_try))
            if np.isfinite(f_try) and merit(x_try, f_try) <= m0 + settings.armijo * alpha * min(slope, 0.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            kkt = _kkt_residual(problem, x, g, qp)
            status = CONVERGED if kkt <= settings.kkt_tolerance else MAX_ITERATIONS
            break

        x_new = np.clip(x_try, lo, hi)
        g_new = problem.grad(x_new)
        B = _bfgs_update(B, x_new - x, g_new - g)
        x, f, g = x_new, f_try, g_new
        history.append(f)

        kkt = _kkt_residual(problem, x, g, qp)
        if kkt <= settings.kkt_tolerance or alpha * np.max(np.abs(d)) <= settings.step_tolerance:
            status = CONVERGED
            break

    return SqpResult(x, f, kkt, iterations, status, history)
