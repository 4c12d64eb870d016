"""
Human leg surrogate: a modulated periodic swing trajectory and a
feedback-linearising "brain" that drives the human limb along it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import JointState, LimbModel, compute_terms

Array = np.ndarray


@dataclass(frozen=True)
class TrajectoryProfile:
    """Per-joint modulated sinusoid ``mean + A(t) sin(theta(t) + phase)``.

    ``A(t) = amplitude * (1 + amp_depth * sin(amp_rate * t))`` and
    ``theta'(t) = frequency * (1 + freq_depth * sin(freq_rate * t))``.
    Vector fields hold one entry per joint (thigh first).
    """

    amplitude: tuple[float, ...] = (0.39, 0.5)
    frequency: tuple[float, ...] = (np.pi, np.pi)
    phase: tuple[float, ...] = (0.0, -np.pi / 2)
    mean: tuple[float, ...] = (0.125, 0.6)
    amp_depth: float = 0.2
    amp_rate: float = 0.2
    freq_depth: float = 0.15
    freq_rate: float = 0.2

    @property
    def dof(self) -> int:
        return len(self.amplitude)

    @classmethod
    def single_joint(cls) -> TrajectoryProfile:
        """Knee-only swing used for the 1-DOF test-stand configuration."""
        return cls(amplitude=(0.5,), frequency=(np.pi,), phase=(-np.pi / 2,), mean=(0.6,))


@dataclass(frozen=True)
class HumanGains:
    Kp: tuple[float, ...] = (400.0, 400.0)
    Kd: tuple[float, ...] = (40.0, 40.0)


def reference_trajectory(profile: TrajectoryProfile, t: float) -> tuple[Array, Array, Array]:
    """Desired joint angle, velocity and acceleration at time ``t``."""
    a0 = np.asarray(profile.amplitude, dtype=float)
    w0 = np.asarray(profile.frequency, dtype=float)
    phi = np.asarray(profile.phase, dtype=float)
    mean = np.asarray(profile.mean, dtype=float)
    dA, wA = profile.amp_depth, profile.amp_rate
    dw, ww = profile.freq_depth, profile.freq_rate

    amp = a0 * (1.0 + dA * np.sin(wA * t))
    amp_d = a0 * dA * wA * np.cos(wA * t)
    amp_dd = -a0 * dA * wA**2 * np.sin(wA * t)

    if ww == 0.0:
        theta = w0 * t
    else:
        theta = w0 * t + w0 * dw * (1.0 - np.cos(ww * t)) / ww
    theta_d = w0 * (1.0 + dw * np.sin(ww * t))
    theta_dd = w0 * dw * ww * np.cos(ww * t)

    s, c = np.sin(theta + phi), np.cos(theta + phi)
    q = mean + amp * s
    qd = amp_d * s + amp * c * theta_d
    qdd = amp_dd * s + 2.0 * amp_d * c * theta_d - amp * s * theta_d**2 + amp * c * theta_dd
    return q, qd, qdd


def human_torque(
    model: LimbModel,
    state: JointState,
    desired: tuple[Array, Array, Array],
    gains: HumanGains,
    T_int: Array,
) -> Array:
    """Feedback-linearising torque; cancels the dynamics and the strap torque."""
    q_d, qd_d, qdd_d = desired
    n = model.dof
    kp = np.asarray(gains.Kp[-n:])
    kd = np.asarray(gains.Kd[-n:])
    M, C, G = compute_terms(model, state)
    v = qdd_d + kd * (qd_d - state.qd) + kp * (q_d - state.q)
    return M @ v + C @ state.qd + G + np.asarray(T_int, dtype=float)


def human_mass_at(t: float, t_end: float, m_start: float = 60.0, m_end: float = 85.0) -> float:
    """Body mass ramped linearly over ``[0, t_end]``; clamped outside."""
    if t_end <= 0:
        return m_end
    frac = min(max(t / t_end, 0.0), 1.0)
    return m_start + (m_end - m_start) * frac
