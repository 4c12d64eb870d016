"""
Planar 1- and 2-link limb dynamics and a fixed-step RK4 integrator.

Angle convention: q1 is the hip angle measured from the downward vertical,
q2 is the knee angle relative to the thigh. A 1-DOF limb is a shank pinned
at the knee, its angle measured from the downward vertical.

Equations of motion:

    robot:  M q̈ + C q̇ + G + k_f1 q̇ + k_f2 sign(q̇) + D = T_R + T_int
    human:  M q̈ + C q̇ + G                             = T_H - T_int
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, NamedTuple, Sequence

import numpy as np

Array = np.ndarray


class ConfigurationError(ValueError):
    """Invalid model parameters or mismatched state dimensions."""


class IntegrationError(FloatingPointError):
    """Non-finite value produced while integrating."""


@dataclass(frozen=True)
class LinkParams:
    mass: float
    length: float
    com_distance: float
    inertia_com: float

    def __post_init__(self) -> None:
        if not self.mass > 0:
            raise ConfigurationError(f"link mass must be positive, got {self.mass}")
        if not self.length > 0:
            raise ConfigurationError(f"link length must be positive, got {self.length}")
        if not 0 <= self.com_distance <= self.length:
            raise ConfigurationError("com_distance must lie in [0, length]")
        if self.inertia_com < 0:
            raise ConfigurationError("inertia_com must be non-negative")


@dataclass(frozen=True)
class LimbModel:
    """Physical parameters of a planar limb.

    ``links`` is ordered thigh then shank; a 1-DOF limb holds only the shank.
    The payload is a point mass at the middle of the shank.
    """

    links: tuple[LinkParams, ...]
    payload_mass: float = 0.0
    viscous_friction: tuple[float, ...] = ()
    coulomb_friction: tuple[float, ...] = ()
    gravity: float = 9.81

    def __post_init__(self) -> None:
        links = tuple(self.links)
        object.__setattr__(self, "links", links)
        if len(links) not in (1, 2):
            raise ConfigurationError(f"dof must be 1 or 2, got {len(links)} links")
        n = len(links)
        for name in ("viscous_friction", "coulomb_friction"):
            value = getattr(self, name)
            if np.isscalar(value):
                value = (float(value),) * n
            value = tuple(float(v) for v in value) or (0.0,) * n
            if len(value) != n:
                raise ConfigurationError(f"{name} needs {n} entries, got {len(value)}")
            if any(v < 0 for v in value):
                raise ConfigurationError(f"{name} must be non-negative")
            object.__setattr__(self, name, value)
        if self.payload_mass < 0:
            raise ConfigurationError("payload_mass must be non-negative")

    @property
    def dof(self) -> int:
        return len(self.links)

    def with_payload(self, payload_mass: float) -> LimbModel:
        return replace(self, payload_mass=float(payload_mass))

    def with_mass_offset(self, dm: float) -> LimbModel:
        """Add ``dm`` kg to every link mass (inertia about the COM is kept)."""
        if dm == 0.0:
            return self
        links = tuple(replace(link, mass=link.mass + dm) for link in self.links)
        return replace(self, links=links)

    @cached_property
    def effective_links(self) -> tuple[LinkParams, ...]:
        """Links with the payload folded into the shank."""
        mp = self.payload_mass
        if mp == 0.0:
            return self.links
        shank = self.links[-1]
        m = shank.mass + mp
        r_p = 0.5 * shank.length
        lc = (shank.mass * shank.com_distance + mp * r_p) / m
        inertia = (
            shank.inertia_com
            + shank.mass * (shank.com_distance - lc) ** 2
            + mp * (r_p - lc) ** 2
        )
        return self.links[:-1] + (LinkParams(m, shank.length, lc, inertia),)

    @cached_property
    def coefficients(self) -> tuple[float, ...]:
        """Lumped inertial/gravity constants used by the closed forms.

        2-DOF: (a1, a2, a3, b1, b2); 1-DOF: (a, b).
        """
        g = self.gravity
        if self.dof == 1:
            (s,) = self.effective_links
            return (s.inertia_com + s.mass * s.com_distance**2, g * s.mass * s.com_distance)
        t, s = self.effective_links
        a1 = t.inertia_com + t.mass * t.com_distance**2 + s.inertia_com + s.mass * (t.length**2 + s.com_distance**2)
        a2 = s.mass * t.length * s.com_distance
        a3 = s.inertia_com + s.mass * s.com_distance**2
        b1 = g * (t.mass * t.com_distance + s.mass * t.length)
        b2 = g * s.mass * s.com_distance
        return (a1, a2, a3, b1, b2)


@dataclass
class JointState:
    q: Array
    qd: Array = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float)).copy()
        if self.qd is None:
            self.qd = np.zeros_like(self.q)
        self.qd = np.atleast_1d(np.asarray(self.qd, dtype=float)).copy()
        if self.q.shape != self.qd.shape or self.q.ndim != 1:
            raise ConfigurationError("q and qd must be 1-D vectors of equal length")

    @property
    def dof(self) -> int:
        return self.q.size

    def as_vector(self) -> Array:
        return np.concatenate([self.q, self.qd])

    @classmethod
    def from_vector(cls, x: Array) -> JointState:
        n = len(x) // 2
        return cls(x[:n], x[n:2 * n])


class DynamicsTerms(NamedTuple):
    M: Array
    C: Array
    G: Array


def _check_dims(model: LimbModel, state: JointState) -> None:
    if state.dof != model.dof:
        raise ConfigurationError(f"state has {state.dof} joints, model has {model.dof}")


def compute_terms(model: LimbModel, state: JointState) -> DynamicsTerms:
    """Mass matrix, Coriolis matrix (Christoffel form) and gravity vector."""
    _check_dims(model, state)
    q, qd = state.q, state.qd
    if model.dof == 1:
        a, b = model.coefficients
        return DynamicsTerms(np.array([[a]]), np.zeros((1, 1)), np.array([b * np.sin(q[0])]))
    a1, a2, a3, b1, b2 = model.coefficients
    c2, s2 = np.cos(q[1]), np.sin(q[1])
    M = np.array([[a1 + 2 * a2 * c2, a3 + a2 * c2], [a3 + a2 * c2, a3]])
    h = a2 * s2
    C = np.array([[-h * qd[1], -h * (qd[0] + qd[1])], [h * qd[0], 0.0]])
    s12 = np.sin(q[0] + q[1])
    G = np.array([b1 * np.sin(q[0]) + b2 * s12, b2 * s12])
    return DynamicsTerms(M, C, G)


def friction_torque(model: LimbModel, qd: Array) -> Array:
    return np.asarray(model.viscous_friction) * qd + np.asarray(model.coulomb_friction) * np.sign(qd)


def mechanical_energy(model: LimbModel, state: JointState) -> float:
    """Kinetic plus potential energy; potential is zero at the pivot height."""
    terms = compute_terms(model, state)
    kinetic = 0.5 * state.qd @ terms.M @ state.qd
    if model.dof == 1:
        _, b = model.coefficients
        return float(kinetic - b * np.cos(state.q[0]))
    *_, b1, b2 = model.coefficients
    return float(kinetic - b1 * np.cos(state.q[0]) - b2 * np.cos(state.q[0] + state.q[1]))


def _solve_accel(M: Array, rhs: Array) -> Array:
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - M is PD for positive masses
        raise FloatingPointError("singular mass matrix") from exc


def forward_dynamics_robot(
    model: LimbModel, state: JointState, T_R: Array, T_int: Array, D: Array
) -> Array:
    """Joint accelerations of the exoskeleton, friction and disturbance included."""
    M, C, G = compute_terms(model, state)
    rhs = (
        np.asarray(T_R, dtype=float)
        + np.asarray(T_int, dtype=float)
        - C @ state.qd
        - G
        - friction_torque(model, state.qd)
        - np.asarray(D, dtype=float)
    )
    return _solve_accel(M, rhs)


def forward_dynamics_human(model: LimbModel, state: JointState, T_H: Array, T_int: Array) -> Array:
    M, C, G = compute_terms(model, state)
    rhs = np.asarray(T_H, dtype=float) - np.asarray(T_int, dtype=float) - C @ state.qd - G
    return _solve_accel(M, rhs)


def accel_batch(
    model: LimbModel, q: Array, qd: Array, tau: Array, friction: bool = True, coulomb_width: float = 0.0
) -> Array:
    """Vectorised forward dynamics over a leading batch axis.

    ``tau`` is the net applied joint torque (everything on the right-hand side
    except the Coriolis, gravity and friction terms). Arrays have shape
    ``(..., dof)``. The 2x2 system is solved in closed form. A positive
    ``coulomb_width`` replaces ``sign(qd)`` by ``tanh(qd / coulomb_width)``,
    which keeps finite-difference derivatives of predictions meaningful.
    """
    if friction:
        sgn = np.tanh(qd / coulomb_width) if coulomb_width > 0 else np.sign(qd)
        tau = tau - np.asarray(model.viscous_friction) * qd - np.asarray(model.coulomb_friction) * sgn
    if model.dof == 1:
        a, b = model.coefficients
        return (tau - b * np.sin(q)) / a
    a1, a2, a3, b1, b2 = model.coefficients
    q1, q2 = q[..., 0], q[..., 1]
    w1, w2 = qd[..., 0], qd[..., 1]
    c2, s2 = np.cos(q2), np.sin(q2)
    s12 = np.sin(q1 + q2)
    h = a2 * s2
    r1 = tau[..., 0] + h * (2.0 * w1 * w2 + w2 * w2) - b1 * np.sin(q1) - b2 * s12
    r2 = tau[..., 1] - h * w1 * w1 - b2 * s12
    m11 = a1 + 2.0 * a2 * c2
    m12 = a3 + a2 * c2
    det = m11 * a3 - m12 * m12
    out = np.empty(np.broadcast(q, tau).shape)
    out[..., 0] = (a3 * r1 - m12 * r2) / det
    out[..., 1] = (m11 * r2 - m12 * r1) / det
    return out


def rk4_step(derivative: Callable[[Array], Array], x: Array, dt: float) -> Array:
    """One classic fourth-order Runge-Kutta step of x' = derivative(x)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = derivative(x)
    k2 = derivative(x + 0.5 * dt * k1)
    k3 = derivative(x + 0.5 * dt * k2)
    k4 = derivative(x + dt * k3)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError("non-finite state in RK4 step")
    return x_next


def robot_step(
    model: LimbModel, x: Array, T_R: Array, T_int: Array, D: Array, dt: float
) -> Array:
    """Advance a robot state vector ``[q, qd]`` by one RK4 step, inputs held."""
    n = model.dof
    tau = np.asarray(T_R, dtype=float) + np.asarray(T_int, dtype=float) - np.asarray(D, dtype=float)

    def f(z: Array) -> Array:
        return np.concatenate([z[n:], accel_batch(model, z[:n], z[n:], tau)])

    return rk4_step(f, np.asarray(x, dtype=float), dt)


def human_step(model: LimbModel, x: Array, T_H: Array, T_int: Array, dt: float) -> Array:
    n = model.dof
    tau = np.asarray(T_H, dtype=float) - np.asarray(T_int, dtype=float)

    def f(z: Array) -> Array:
        return np.concatenate([z[n:], accel_batch(model, z[:n], z[n:], tau, friction=False)])

    return rk4_step(f, np.asarray(x, dtype=float), dt)


def default_robot_model(dof: int = 2, payload_mass: float = 0.0) -> LimbModel:
    thigh = LinkParams(2.5, 0.40, 0.20, 0.035)
    shank = LinkParams(2.0, 0.40, 0.18, 0.030)
    links = (thigh, shank) if dof == 2 else (shank,)
    return LimbModel(
        links,
        payload_mass=payload_mass,
        viscous_friction=0.000899,
        coulomb_friction=0.05048,
    )


def human_model(body_mass: float, dof: int = 2, height: float = 1.75) -> LimbModel:
    """Human leg from anthropometric segment fractions of body mass and height."""
    l_thigh = 0.245 * height
    l_shank = 0.246 * height
    thigh = LinkParams(0.100 * body_mass, l_thigh, 0.433 * l_thigh, 0.100 * body_mass * (0.323 * l_thigh) ** 2)
    shank = LinkParams(0.061 * body_mass, l_shank, 0.434 * l_shank, 0.061 * body_mass * (0.302 * l_shank) ** 2)
    links: Sequence[LinkParams] = (thigh, shank) if dof == 2 else (shank,)
    return LimbModel(tuple(links))
