import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exompc.dynamics import (
    ConfigurationError,
    IntegrationError,
    JointState,
    LimbModel,
    LinkParams,
    accel_batch,
    compute_terms,
    default_robot_model,
    forward_dynamics_human,
    forward_dynamics_robot,
    human_model,
    rk4_step,
)
from exompc.selftest import check_energy, check_mass_matrix, check_skew_symmetry, rk4_order

angles = st.floats(-np.pi, np.pi)
rates = st.floats(-5, 5)


def kinetic(model, q, qd):
    return 0.5 * qd @ compute_terms(model, JointState(q, qd)).M @ qd


def test_single_shank_inertia():
    model = LimbModel((LinkParams(2.0, 0.4, 0.2, 0.03),))
    for q in (-1.0, 0.0, 0.7):
        M = compute_terms(model, JointState([q])).M
        assert M == pytest.approx(np.array([[0.11]]), abs=1e-15)


def test_mass_matrix_matches_kinetic_energy_hessian():
    # KE is quadratic in qd, so central second differences are exact up to rounding
    model = default_robot_model(payload_mass=1.3)
    q = np.array([0.4, 0.9])
    h = 1e-3
    M_num = np.empty((2, 2))
    E = np.eye(2)
    for i in range(2):
        for j in range(2):
            f = lambda a, b: kinetic(model, q, a * E[i] * h + b * E[j] * h)  # noqa: E731
            M_num[i, j] = (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1)) / (4 * h * h)
    M = compute_terms(model, JointState(q)).M
    assert np.allclose(M_num, M, rtol=1e-6)


@given(angles, angles)
def test_coriolis_vanishes_at_rest(q1, q2):
    terms = compute_terms(default_robot_model(), JointState([q1, q2]))
    assert np.all(terms.C @ np.zeros(2) == 0)


@given(angles, angles, rates, rates)
def test_mass_matrix_symmetric_pd(q1, q2, w1, w2):
    M = compute_terms(default_robot_model(payload_mass=2.0), JointState([q1, q2], [w1, w2])).M
    assert abs(M[0, 1] - M[1, 0]) <= 1e-12
    np.linalg.cholesky(M)


@given(angles, angles)
def test_gravity_bounded_by_weight_times_length(q1, q2):
    model = default_robot_model(payload_mass=2.0)
    G = compute_terms(model, JointState([q1, q2])).G
    total = sum(l.mass for l in model.links) + model.payload_mass
    assert np.all(np.abs(G) <= model.gravity * total * sum(l.length for l in model.links))


@given(angles, angles, rates, rates)
def test_payload_zero_is_identity(q1, q2, w1, w2):
    base = default_robot_model()
    st_ = JointState([q1, q2], [w1, w2])
    a, b = compute_terms(base, st_), compute_terms(base.with_payload(0.0), st_)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        compute_terms(default_robot_model(), JointState([0.1]))


def test_invalid_parameters():
    with pytest.raises(ConfigurationError):
        LinkParams(0.0, 0.4, 0.2, 0.03)
    with pytest.raises(ConfigurationError):
        LinkParams(1.0, 0.4, 0.5, 0.03)
    with pytest.raises(ConfigurationError):
        LimbModel((LinkParams(1.0, 0.4, 0.2, 0.03),), payload_mass=-1)
    with pytest.raises(ConfigurationError):
        LimbModel((LinkParams(1.0, 0.4, 0.2, 0.03),), viscous_friction=(0.1, 0.2))


def test_human_model_is_frictionless():
    m = human_model(70.0)
    assert m.viscous_friction == (0.0, 0.0) and m.coulomb_friction == (0.0, 0.0)


def test_static_equilibrium_robot():
    model = default_robot_model()
    s = JointState([0.3, 0.5])
    G = compute_terms(model, s).G
    assert np.allclose(forward_dynamics_robot(model, s, G, np.zeros(2), np.zeros(2)), 0, atol=1e-12)


def test_hanging_equilibrium():
    model = LimbModel(default_robot_model().links)
    acc = forward_dynamics_robot(model, JointState([0.0, 0.0]), np.zeros(2), np.zeros(2), np.zeros(2))
    assert np.allclose(acc, 0, atol=1e-15)


def _inverse_2x2(M):
    (a, b), (c, d) = M
    return np.array([[d, -b], [-c, a]]) / (a * d - b * c)


@given(angles, angles, rates, rates, st.floats(-20, 20), st.floats(-20, 20))
def test_robot_dynamics_against_explicit_inverse(q1, q2, w1, w2, t1, t2):
    model = default_robot_model(payload_mass=0.7)
    s = JointState([q1, q2], [w1, w2])
    T_R, T_int, D = np.array([t1, t2]), np.array([0.3, -0.2]), np.array([0.05, 0.1])
    M, C, G = compute_terms(model, s)
    fr = np.asarray(model.viscous_friction) * s.qd + np.asarray(model.coulomb_friction) * np.sign(s.qd)
    ref = _inverse_2x2(M) @ (T_R + T_int - C @ s.qd - G - fr - D)
    assert np.allclose(forward_dynamics_robot(model, s, T_R, T_int, D), ref, rtol=1e-9, atol=1e-9)
    batch = accel_batch(model, s.q, s.qd, T_R + T_int - D)
    assert np.allclose(batch, ref, rtol=1e-9, atol=1e-9)


def test_coulomb_sign_zero():
    model = default_robot_model(1)
    s = JointState([0.0], [0.0])
    acc = forward_dynamics_robot(model, s, np.zeros(1), np.zeros(1), np.zeros(1))
    assert acc[0] == 0.0


def test_human_gravity_compensation_and_strap_sign():
    model = human_model(70.0)
    s = JointState([0.05, 0.1])
    G = compute_terms(model, s).G
    assert np.allclose(forward_dynamics_human(model, s, G, np.zeros(2)), 0, atol=1e-12)
    base = forward_dynamics_human(model, JointState([0.0, 0.0]), np.zeros(2), np.zeros(2))
    pushed = forward_dynamics_human(model, JointState([0.0, 0.0]), np.zeros(2), np.array([1.0, 0.0]))
    assert pushed[0] < base[0]
    pushed = forward_dynamics_human(model, JointState([0.0, 0.0]), np.zeros(2), np.array([0.0, 1.0]))
    assert pushed[1] < base[1]


def test_rk4_zero_derivative():
    x = np.array([1.0, -2.0])
    assert np.array_equal(rk4_step(lambda z: np.zeros_like(z), x, 0.1), x)


def test_rk4_exponential_decay():
    x = rk4_step(lambda z: -z, np.array([1.0]), 0.01)
    assert x[0] == pytest.approx(0.9900498337, abs=1e-10)


def test_rk4_local_error_ratio():
    errs = [abs(rk4_step(lambda z: -z, np.array([1.0]), h)[0] - np.exp(-h)) for h in (0.1, 0.05)]
    assert errs[0] / errs[1] == pytest.approx(32, rel=0.05)


def test_rk4_global_order():
    assert abs(rk4_order() - 4.0) <= 0.1


def test_rk4_rejects_bad_input():
    with pytest.raises(ValueError):
        rk4_step(lambda z: z, np.ones(1), 0.0)
    with pytest.raises(IntegrationError):
        rk4_step(lambda z: np.full_like(z, np.inf), np.ones(1), 0.1)


def test_invariant_checks():
    assert check_mass_matrix(samples=200).passed
    assert check_skew_symmetry(samples=100).passed
    assert check_energy().passed
