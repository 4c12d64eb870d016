"""Strap spring-damper coupling between the human leg and the exoskeleton."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dynamics import ConfigurationError, JointState

Array = np.ndarray


@dataclass(frozen=True)
class StrapConfig:
    k_s: float = 937.5
    c_s: float = 93.7
    L_s1: float = 0.28
    L_s2: float = 0.16

    def __post_init__(self) -> None:
        for name in ("k_s", "c_s", "L_s1", "L_s2"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")


class InteractionForces(NamedTuple):
    F1: float
    F2: float

    def as_array(self, dof: int = 2) -> Array:
        return np.array([self.F1, self.F2]) if dof == 2 else np.array([self.F2])


@dataclass(frozen=True)
class EstimatorGains:
    """Diagonal gains mapping strap force to joint position / velocity offsets."""

    K1: tuple[float, ...] = (0.005, 0.005)
    K2: tuple[float, ...] = (0.01, 0.05)

    def __post_init__(self) -> None:
        for name in ("K1", "K2"):
            value = getattr(self, name)
            value = (float(value),) * 2 if np.isscalar(value) else tuple(float(v) for v in value)
            if any(v < 0 for v in value):
                raise ConfigurationError(f"{name} entries must be non-negative")
            object.__setattr__(self, name, value)


def strap_forces(cfg: StrapConfig, human: JointState, robot: JointState) -> InteractionForces:
    """Thigh (F1) and shank (F2) strap forces; positive when the human leads.

    In 1-DOF mode there is a single shank strap and F1 is reported as zero.
    """
    if human.dof != robot.dof:
        raise ConfigurationError("human and robot states differ in dimension")
    dq = human.q - robot.q
    dqd = human.qd - robot.qd
    if human.dof == 1:
        return InteractionForces(0.0, float(cfg.L_s2 * (cfg.k_s * dq[0] + cfg.c_s * dqd[0])))
    thigh = cfg.L_s1 * (cfg.k_s * dq[0] + cfg.c_s * dqd[0])
    shank = cfg.L_s2 * (cfg.k_s * dq[1] + cfg.c_s * dqd[1])
    return InteractionForces(float(thigh), float(thigh + shank))


def interaction_torques(cfg: StrapConfig, F: InteractionForces, dof: int = 2) -> Array:
    """Joint torques from strap forces via their lever arms, diag(L_s1, L_s2)."""
    if dof == 1:
        return np.array([cfg.L_s2 * F.F2])
    return np.array([cfg.L_s1 * F.F1, cfg.L_s2 * F.F2])


def estimate_human_state(
    robot: JointState, F: InteractionForces, gains: EstimatorGains
) -> tuple[Array, Array]:
    """Human joint angles/velocities inferred from the robot state and strap forces."""
    n = robot.dof
    f = F.as_array(n)
    k1 = np.asarray(gains.K1[-n:])
    k2 = np.asarray(gains.K2[-n:])
    return robot.q + k1 * f, robot.qd + k2 * f
