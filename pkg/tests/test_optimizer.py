import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exompc.optimizer import (
    CONVERGED,
    QP_INFEASIBLE,
    NlpProblem,
    SqpSettings,
    _bfgs_update,
    check_gradient,
    solve_qp,
    sqp_solve,
)
from exompc.selftest import box_qp_oracle, random_box_qp

seeds = st.integers(0, 2**32 - 1)


def rosenbrock(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


def rosenbrock_grad(x):
    return np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])


def test_unconstrained_qp():
    sol = solve_qp(2 * np.eye(2), np.array([-2.0, -4.0]))
    assert sol.status == CONVERGED
    assert sol.x == pytest.approx([1.0, 2.0], abs=1e-12)


def test_single_active_bound():
    # min (x - 3)^2 = x^2 - 6x + 9
    sol = solve_qp(np.array([[2.0]]), np.array([-6.0]), np.array([[1.0]]), np.array([2.0]))
    assert sol.x[0] == pytest.approx(2.0, abs=1e-12)
    assert sol.multipliers[0] == pytest.approx(2.0, abs=1e-9)
    sol = solve_qp(np.array([[2.0]]), np.array([-6.0]), hi=np.array([2.0]))
    assert sol.lam_upper[0] == pytest.approx(2.0, abs=1e-9)


def test_infeasible_start_reported():
    sol = solve_qp(np.eye(1), np.zeros(1), np.array([[1.0]]), np.array([-1.0]))
    assert sol.status == QP_INFEASIBLE


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_qp_matches_enumeration_oracle(seed):
    H, g, lo, hi = random_box_qp(np.random.default_rng(seed))
    sol = solve_qp(H, g, lo=lo, hi=hi)
    assert sol.status == CONVERGED
    assert np.allclose(sol.x, box_qp_oracle(H, g, lo, hi), atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_qp_kkt_conditions(seed):
    rng = np.random.default_rng(seed)
    n = 4
    H, g, lo, hi = random_box_qp(rng, n)
    A = rng.normal(size=(3, n))
    b = rng.uniform(0.1, 1.0, 3)  # x = 0 feasible
    sol = solve_qp(H, g, A, b, lo, hi)
    assert sol.status == CONVERGED
    x = sol.x
    stat = H @ x + g + A.T @ sol.multipliers + sol.lam_upper - sol.lam_lower
    assert np.abs(stat).max() <= 1e-9
    assert np.all(A @ x <= b + 1e-9) and np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12)
    assert min(sol.multipliers.min(), sol.lam_upper.min(), sol.lam_lower.min()) >= 0
    assert np.abs(sol.multipliers * (A @ x - b)).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_sqp_on_convex_qp_matches_qp(seed):
    rng = np.random.default_rng(seed)
    H, g, lo, hi = random_box_qp(rng)
    A = rng.normal(size=(2, 4))
    b = rng.uniform(0.1, 1.0, 2)
    ref = solve_qp(H, g, A, b, lo, hi)
    nlp = NlpProblem(4, lambda x: 0.5 * x @ H @ x + g @ x, lambda x: H @ x + g, A, b, lo, hi)
    res = sqp_solve(nlp, np.zeros(4), SqpSettings(max_iterations=100, kkt_tolerance=1e-12))
    assert res.status == CONVERGED
    assert np.allclose(res.x_star, ref.x, atol=1e-8)
    assert np.all(A @ res.x_star <= b + 1e-9)
    assert np.all(res.x_star >= lo - 1e-12) and np.all(res.x_star <= hi + 1e-12)


def test_rosenbrock():
    nlp = NlpProblem(2, rosenbrock, rosenbrock_grad)
    res = sqp_solve(nlp, np.array([-1.2, 1.0]), SqpSettings(max_iterations=200, kkt_tolerance=1e-10))
    assert res.status == CONVERGED
    assert res.x_star == pytest.approx([1.0, 1.0], abs=1e-6)
    # unconstrained merit is the objective itself: non-increasing over accepted steps
    assert np.all(np.diff(res.merit_history) <= 1e-12)


def test_rosenbrock_finite_difference_gradient():
    res = sqp_solve(NlpProblem(2, rosenbrock), np.array([-1.2, 1.0]), SqpSettings(max_iterations=200, kkt_tolerance=1e-8))
    assert res.x_star == pytest.approx([1.0, 1.0], abs=1e-4)


def test_already_optimal_start():
    H, g = 2 * np.eye(2), np.array([-2.0, -4.0])
    s = SqpSettings()
    res = sqp_solve(NlpProblem(2, lambda x: 0.5 * x @ H @ x + g @ x, lambda x: H @ x + g), np.array([1.0, 2.0]), s)
    assert res.iterations <= 1
    assert np.abs(res.x_star - [1.0, 2.0]).max() <= s.step_tolerance


def test_infeasible_start_is_projected():
    A = np.array([[1.0, 1.0]])
    nlp = NlpProblem(2, lambda x: float(np.sum((x - 2) ** 2)), lambda x: 2 * (x - 2), A, np.array([1.0]))
    res = sqp_solve(nlp, np.array([5.0, 5.0]))
    assert res.x_star == pytest.approx([0.5, 0.5], abs=1e-6)


@given(seeds)
def test_bfgs_stays_positive_definite(seed):
    rng = np.random.default_rng(seed)
    B = np.eye(3)
    for _ in range(20):
        B = _bfgs_update(B, rng.normal(size=3), rng.normal(size=3) * 10)
        np.linalg.cholesky(B)
        assert np.allclose(B, B.T)


@given(seeds)
def test_gradient_check_mode(seed):
    x = np.random.default_rng(seed).uniform(-2, 2, 2)
    assert check_gradient(NlpProblem(2, rosenbrock, rosenbrock_grad), x) <= 1e-5 or np.allclose(
        rosenbrock_grad(x), 0, atol=1e-6)


def test_gradient_check_catches_wrong_gradient():
    bad = NlpProblem(2, rosenbrock, lambda x: rosenbrock_grad(x) * 1.01)
    assert check_gradient(bad, np.array([0.3, -0.4])) > 1e-3
