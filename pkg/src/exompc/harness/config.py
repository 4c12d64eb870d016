"""Experiment configuration and the sectioned text config-file loader."""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from ..dynamics import ConfigurationError, LimbModel, LinkParams, default_robot_model
from ..human import HumanGains, TrajectoryProfile
from ..interaction import EstimatorGains, StrapConfig
from ..msnmpc import EkfSettings
from ..nmpc import NmpcConfig
from ..optimizer import SqpSettings

CONTROLLERS = ("nmpc", "msnmpc", "both")


@dataclass(frozen=True)
class SimConfig:
    dof: int = 2
    duration: float = 30.0
    dt: float = 0.01
    controller: str = "both"
    true_payload: float = 2.0
    hypotheses: tuple[float, ...] = (0.0, 1.0, 2.0)

    # uncertainty switches
    mass_wobble: bool = True
    disturbance: bool = True
    sensor_noise: bool = True
    mass_ramp: bool = True
    filter_window: int = 5
    force_saturation: Optional[float] = None

    robot: LimbModel = field(default_factory=default_robot_model)
    human_mass_start: float = 60.0
    human_mass_end: float = 85.0
    human_height: float = 1.75
    human_gains: HumanGains = field(default_factory=HumanGains)
    trajectory: TrajectoryProfile = field(default_factory=TrajectoryProfile)
    straps: StrapConfig = field(default_factory=StrapConfig)
    estimator: EstimatorGains = field(default_factory=EstimatorGains)

    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    sqp: SqpSettings = field(default_factory=SqpSettings)
    c1: float = 100.0
    mu_floor: float = 1e-4
    ekf: EkfSettings = field(default_factory=EkfSettings)

    settle: float = 2.0
    record_timing: bool = True
    threads: int = 1
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        if self.dof not in (1, 2):
            raise ConfigurationError("dof must be 1 or 2")
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"controller must be one of {CONTROLLERS}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.duration < 10 * self.dt:
            raise ConfigurationError("duration must cover at least 10 steps")
        if self.robot.dof != self.dof:
            raise ConfigurationError("robot model dof does not match run dof")
        if self.trajectory.dof != self.dof:
            raise ConfigurationError("trajectory profile dof does not match run dof")
        if self.true_payload < 0 or any(h < 0 for h in self.hypotheses):
            raise ConfigurationError("payloads must be non-negative")
        if not self.hypotheses:
            raise ConfigurationError("at least one scenario hypothesis is required")
        if self.filter_window < 1:
            raise ConfigurationError("filter_window must be >= 1")
        if abs(self.nmpc.dt - self.dt) > 1e-15:
            object.__setattr__(self, "nmpc", replace(self.nmpc, dt=self.dt))

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    @classmethod
    def single_joint(cls, **overrides: Any) -> SimConfig:
        """1-DOF shank configuration: fixed 60 kg user, knee-only swing."""
        base = dict(
            dof=1,
            robot=default_robot_model(1),
            trajectory=TrajectoryProfile.single_joint(),
            human_gains=HumanGains((400.0,), (40.0,)),
            mass_ramp=False,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def noise_free(cls, **overrides: Any) -> SimConfig:
        """All uncertainty sources off and the sensor averaging disabled."""
        base = dict(mass_wobble=False, disturbance=False, sensor_noise=False, mass_ramp=False, filter_window=1)
        base.update(overrides)
        return cls(**base)

    def with_(self, **changes: Any) -> SimConfig:
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# config file

_SECTIONS = ("robot", "human", "straps", "nmpc", "msnmpc", "uncertainty", "run")


def _parse_value(raw: str) -> Any:
    text = raw.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _tuple(v: Any, n: int) -> tuple[float, ...]:
    if isinstance(v, (int, float)):
        return (float(v),) * n
    return tuple(float(x) for x in v)


def _take(section: dict[str, Any], allowed: set[str], name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")


def load_config(path: str | Path, base: Optional[SimConfig] = None) -> SimConfig:
    """Read an INI-style config file into a :class:`SimConfig`.

    Sections: [robot], [human], [straps], [nmpc], [msnmpc], [uncertainty],
    [run]. Model and control constants use their symbol names (k_f1, k_s, L_s1, K_1,
    N_p, r_t, c_1, ...). Unknown sections or keys raise ConfigurationError.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep case: K_1 and k_f1 differ
    with open(path) as fh:
        parser.read_file(fh)
    raw = {s: {k: _parse_value(v) for k, v in parser.items(s)} for s in parser.sections()}
    bad = set(raw) - set(_SECTIONS)
    if bad:
        raise ConfigurationError(f"unknown section(s): {', '.join(sorted(bad))}")

    run = raw.get("run", {})
    _take(run, {"dof", "duration", "dt", "controller", "settle", "record_timing", "threads", "out"}, "run")
    dof = int(run.get("dof", base.dof if base else 2))
    cfg = base if base is not None and base.dof == dof else (SimConfig() if dof == 2 else SimConfig.single_joint())
    ch: dict[str, Any] = {}
    for key, attr in (("duration", "duration"), ("dt", "dt"), ("controller", "controller"),
                      ("settle", "settle"), ("record_timing", "record_timing"), ("threads", "threads"),
                      ("out", "out_dir")):
        if key in run:
            ch[attr] = run[key]

    robot = raw.get("robot", {})
    link_keys = {f"{seg}_{p}" for seg in ("thigh", "shank") for p in ("mass", "length", "com", "inertia")}
    _take(robot, link_keys | {"k_f1", "k_f2", "gravity"}, "robot")
    if robot:
        names = ("thigh", "shank") if dof == 2 else ("shank",)
        links = []
        for seg, link in zip(names, cfg.robot.links):
            links.append(LinkParams(
                float(robot.get(f"{seg}_mass", link.mass)),
                float(robot.get(f"{seg}_length", link.length)),
                float(robot.get(f"{seg}_com", link.com_distance)),
                float(robot.get(f"{seg}_inertia", link.inertia_com)),
            ))
        ch["robot"] = LimbModel(
            tuple(links),
            viscous_friction=_tuple(robot.get("k_f1", cfg.robot.viscous_friction), dof),
            coulomb_friction=_tuple(robot.get("k_f2", cfg.robot.coulomb_friction), dof),
            gravity=float(robot.get("gravity", cfg.robot.gravity)),
        )

    human = raw.get("human", {})
    traj_keys = {f.name for f in fields(TrajectoryProfile)}
    _take(human, {"m_start", "m_end", "height", "Kp", "Kd"} | traj_keys, "human")
    if "m_start" in human:
        ch["human_mass_start"] = float(human["m_start"])
    if "m_end" in human:
        ch["human_mass_end"] = float(human["m_end"])
    if "height" in human:
        ch["human_height"] = float(human["height"])
    if "Kp" in human or "Kd" in human:
        ch["human_gains"] = HumanGains(
            _tuple(human.get("Kp", cfg.human_gains.Kp), dof), _tuple(human.get("Kd", cfg.human_gains.Kd), dof)
        )
    traj = {k: human[k] for k in traj_keys if k in human}
    if traj:
        traj = {k: (_tuple(v, dof) if k in ("amplitude", "frequency", "phase", "mean") else float(v))
                for k, v in traj.items()}
        ch["trajectory"] = replace(cfg.trajectory, **traj)

    straps = raw.get("straps", {})
    _take(straps, {"k_s", "c_s", "L_s1", "L_s2", "K_1", "K_2"}, "straps")
    strap_kw = {k: float(straps[k]) for k in ("k_s", "c_s", "L_s1", "L_s2") if k in straps}
    if strap_kw:
        ch["straps"] = replace(cfg.straps, **strap_kw)
    if "K_1" in straps or "K_2" in straps:
        ch["estimator"] = EstimatorGains(
            _tuple(straps.get("K_1", cfg.estimator.K1), 2), _tuple(straps.get("K_2", cfg.estimator.K2), 2)
        )

    nmpc = raw.get("nmpc", {})
    sqp_keys = {f.name for f in fields(SqpSettings)}
    _take(nmpc, {"N_p", "N_c", "r_d", "r_t", "T_max", "dT_max"} | sqp_keys, "nmpc")
    nm_kw = {k: nmpc[k] for k in ("N_p", "N_c", "r_d", "r_t", "T_max", "dT_max") if k in nmpc}
    if nm_kw:
        ch["nmpc"] = replace(cfg.nmpc, **nm_kw)
    sqp_kw = {k: nmpc[k] for k in sqp_keys if k in nmpc}
    if sqp_kw:
        ch["sqp"] = replace(cfg.sqp, **sqp_kw)

    ms = raw.get("msnmpc", {})
    ekf_keys = {f.name for f in fields(EkfSettings)}
    _take(ms, {"N", "c_1", "mu_floor", "hypotheses"} | ekf_keys, "msnmpc")
    if "hypotheses" in ms:
        ch["hypotheses"] = _tuple(ms["hypotheses"], 1)
    if "N" in ms and int(ms["N"]) != len(ch.get("hypotheses", cfg.hypotheses)):
        raise ConfigurationError("[msnmpc] N must equal the number of hypotheses")
    if "c_1" in ms:
        ch["c1"] = float(ms["c_1"])
    if "mu_floor" in ms:
        ch["mu_floor"] = float(ms["mu_floor"])
    ekf_kw = {k: float(ms[k]) for k in ekf_keys if k in ms}
    if ekf_kw:
        ch["ekf"] = replace(cfg.ekf, **ekf_kw)

    unc = raw.get("uncertainty", {})
    _take(unc, {"true_payload", "mass_wobble", "disturbance", "sensor_noise", "mass_ramp",
                "filter_window", "force_saturation"}, "uncertainty")
    ch.update(unc)

    return replace(cfg, **ch)


def write_default_config(path: str | Path, dof: int = 2) -> None:
    """Write a config file holding the default parameter set."""
    cfg = SimConfig() if dof == 2 else SimConfig.single_joint()
    names = ("thigh", "shank") if dof == 2 else ("shank",)
    lines = ["[run]", f"dof = {dof}", f"duration = {cfg.duration}", f"dt = {cfg.dt}",
             f"controller = {cfg.controller}", f"settle = {cfg.settle}", "", "[robot]"]
    for seg, link in zip(names, cfg.robot.links):
        lines += [f"{seg}_mass = {link.mass}", f"{seg}_length = {link.length}",
                  f"{seg}_com = {link.com_distance}", f"{seg}_inertia = {link.inertia_com}"]
    lines += [f"k_f1 = {cfg.robot.viscous_friction[0]}", f"k_f2 = {cfg.robot.coulomb_friction[0]}", "",
              "[human]", f"m_start = {cfg.human_mass_start}", f"m_end = {cfg.human_mass_end}",
              f"Kp = {list(cfg.human_gains.Kp[-dof:])}", f"Kd = {list(cfg.human_gains.Kd[-dof:])}", "",
              "[straps]", f"k_s = {cfg.straps.k_s}", f"c_s = {cfg.straps.c_s}", f"L_s1 = {cfg.straps.L_s1}",
              f"L_s2 = {cfg.straps.L_s2}", f"K_1 = {list(cfg.estimator.K1)}", f"K_2 = {list(cfg.estimator.K2)}", "",
              "[nmpc]", f"N_p = {cfg.nmpc.N_p}", f"N_c = {cfg.nmpc.N_c}", f"r_d = {cfg.nmpc.r_d}",
              f"r_t = {cfg.nmpc.r_t}", f"T_max = {cfg.nmpc.T_max}", f"dT_max = {cfg.nmpc.dT_max}", "",
              "[msnmpc]", f"N = {len(cfg.hypotheses)}", f"hypotheses = {list(cfg.hypotheses)}", f"c_1 = {cfg.c1}", "",
              "[uncertainty]", f"true_payload = {cfg.true_payload}", f"mass_wobble = {cfg.mass_wobble}",
              f"disturbance = {cfg.disturbance}", f"sensor_noise = {cfg.sensor_noise}",
              f"mass_ramp = {cfg.mass_ramp}", f"filter_window = {cfg.filter_window}", ""]
    Path(path).write_text("\n".join(lines))
