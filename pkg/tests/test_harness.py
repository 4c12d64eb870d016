import numpy as np
import pytest

from exompc.cli import build_parser, main, resolve_config
from exompc.dynamics import ConfigurationError
from exompc.harness import (
    SimConfig,
    compute_metrics,
    disturbance_models,
    load_config,
    read_log_csv,
    run_controllers,
    run_simulation,
    sensor_filter,
    sweep_payloads,
    sweep_table,
    write_default_config,
    write_log_csv,
)
from exompc.harness.export import log_columns
from exompc.harness.simulation import MovingAverage, SimLog, make_controller


def fake_log(F, t=None, mu=None):
    K = len(F)
    t = np.arange(K) * 0.01 if t is None else t
    z = np.zeros((K, 2))
    mu = np.full((K, 3), np.nan) if mu is None else mu
    return SimLog("msnmpc", 2, 0.0, (0.0, 1.0, 2.0), t, z, z, z, z, z, z, np.asarray(F, dtype=float),
                  z, z, mu, np.zeros((K, 3, 2)), np.zeros(K), np.ones(K))


def test_uncertainties_at_zero():
    u = disturbance_models(0.0)
    assert u.m_dis == pytest.approx(0.01 * np.sin(np.pi / 4), abs=1e-12)
    assert u.m_dis == pytest.approx(0.0070711, abs=1e-7)
    assert u.D == pytest.approx(0.05, abs=1e-15)
    assert disturbance_models(1.3, False, False, False) == (0.0, 0.0, 0.0, 0.0)


def test_sensor_filter_examples():
    assert sensor_filter([[2.0]] * 5) == pytest.approx([2.0])
    assert sensor_filter([1, 2, 3, 4, 5]) == pytest.approx(3.0)


def test_step_reaches_final_value_after_five_samples():
    f = MovingAverage(5)
    out = [float(f(v)) for v in [0.0] + [1.0] * 6]
    assert out[1:5] == pytest.approx([0.2, 0.4, 0.6, 0.8])
    assert out[5] == 1.0 and out[6] == 1.0


def test_filter_pads_with_first_sample():
    f = MovingAverage(5)
    assert float(f(3.0)) == 3.0


def test_metrics_constant_and_sinusoid():
    t = np.arange(0, 10, 0.001)
    F = np.stack([np.full_like(t, 2.0), 3.0 * np.sin(2 * np.pi * t)], axis=1)
    m = compute_metrics(fake_log(F, t), settle=0.0 - 1.0)
    assert m.rms_F1 == pytest.approx(2.0)
    assert m.rms_F2 == pytest.approx(3.0 / np.sqrt(2), rel=1e-6)


def test_metrics_settle_window_and_beliefs():
    K = 500
    t = np.arange(K) * 0.01
    F = np.zeros((K, 2))
    F[t <= 2.0] = 100.0
    mu = np.tile([1.0, 0.0, 0.0], (K, 1))
    m = compute_metrics(fake_log(F, t, mu), settle=2.0)
    assert m.rms_F1 == 0.0
    assert m.mu_mean == (100.0, 0.0, 0.0)


def test_config_defaults_and_validation():
    cfg = SimConfig()
    assert cfg.steps == 3000 and cfg.true_payload == 2.0 and cfg.hypotheses == (0.0, 1.0, 2.0)
    with pytest.raises(ConfigurationError):
        SimConfig(dt=0.0)
    with pytest.raises(ConfigurationError):
        SimConfig(duration=0.05)


def test_config_round_trip(tmp_path):
    for dof in (1, 2):
        path = tmp_path / f"d{dof}.ini"
        write_default_config(path, dof)
        base = SimConfig() if dof == 2 else SimConfig.single_joint()
        assert load_config(path) == base


def test_config_overrides(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[straps]\nK_2 = [0.02, 0.04]\n[msnmpc]\nc_1 = 50\nhypotheses = [0, 2]\n"
                    "[uncertainty]\ntrue_payload = 1.5\nsensor_noise = false\n[nmpc]\nr_t = 1e-5\n")
    cfg = load_config(path)
    assert cfg.estimator.K2 == (0.02, 0.04)
    assert cfg.c1 == 50.0 and cfg.hypotheses == (0.0, 2.0)
    assert cfg.true_payload == 1.5 and cfg.sensor_noise is False
    assert cfg.nmpc.r_t == 1e-5


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[nmpc]\nhorizon = 3\n", "[msnmpc]\nN = 2\n"])
def test_config_rejects_unknown_or_inconsistent(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        load_config(path)


def _short(**kw):
    kw.setdefault("duration", 0.3)
    return SimConfig.noise_free(record_timing=False, **kw)


def test_csv_schema_and_round_trip(tmp_path):
    lg = run_simulation(_short(), "msnmpc")
    path = write_log_csv(lg, tmp_path / "log.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header == [
        "t", "qH_hip", "qH_knee", "qdH_hip", "qdH_knee", "qR_hip", "qR_knee", "qdR_hip", "qdR_knee",
        "TR_hip", "TR_knee", "F1", "F2", "qhatH_hip", "qhatH_knee", "mu_1", "mu_2", "mu_3",
        "Dhat_1", "Dhat_2", "sqp_iters", "step_ms",
    ]
    data = read_log_csv(path)
    assert len(data["t"]) == len(lg) == 30
    assert np.array_equal(data["TR_knee"], lg.T_R[:, 1])
    assert np.array_equal(data["F2"], lg.F[:, 1])
    assert np.allclose(data["mu_1"] + data["mu_2"] + data["mu_3"], 1.0, atol=1e-12)


def test_single_joint_csv(tmp_path):
    lg = run_simulation(SimConfig.single_joint(duration=0.2, record_timing=False), "nmpc")
    cols = log_columns(lg)
    assert "qH_hip" not in cols and "qH_knee" in cols and "F1" in cols
    data = read_log_csv(write_log_csv(lg, tmp_path / "one.csv"))
    assert np.all(data["F1"] == 0.0)
    assert np.all(np.isnan(data["mu_1"]))


def test_controllers_see_identical_human_trajectories():
    logs = run_controllers(_short(controller="both"))
    # the human reference is identical; the first control step happens from the same state
    a, b = logs["nmpc"], logs["msnmpc"]
    assert np.array_equal(a.t, b.t)
    assert np.array_equal(a.q_H[0], b.q_H[0])


def test_information_barrier_canary():
    cfg = _short(duration=0.6, true_payload=0.0)
    switch = 0.3
    ref = run_simulation(cfg, "msnmpc")
    pert = run_simulation(cfg, "msnmpc", payload_schedule=lambda t: 0.0 if t < switch else 2.0)
    k = int(round(switch / cfg.dt))
    # the plant changes at step k; the controller can only notice from step k + 1 on
    assert np.array_equal(ref.T_R[:k + 1], pert.T_R[:k + 1])
    assert not np.array_equal(ref.T_R[k + 1:], pert.T_R[k + 1:])
    # controllers built from configs differing only in plant truth are identical
    a = make_controller(cfg.with_(true_payload=0.0, disturbance=False), "msnmpc")
    b = make_controller(cfg.with_(true_payload=2.0, disturbance=True), "msnmpc")
    assert a == b


def test_timing_columns_and_ordering():
    cfg = SimConfig(duration=1.0)
    n = run_simulation(cfg, "nmpc")
    m = run_simulation(cfg, "msnmpc")
    assert np.all(n.step_ms > 0) and np.all(m.step_ms > 0)
    assert m.step_ms.mean() >= n.step_ms.mean()


def test_single_payload_sweep_matches_one_run():
    cfg = _short()
    rows = sweep_payloads(cfg, [1.0])
    assert len(rows) == 1
    lg = run_simulation(cfg.with_(true_payload=1.0), "msnmpc")
    assert rows[0]["msnmpc"] == compute_metrics(lg, cfg.settle)


def test_default_sweep_has_nine_rows():
    rows = sweep_payloads(SimConfig.noise_free(duration=0.1, record_timing=False))
    header, table = sweep_table(rows)
    assert len(table) == 9
    assert [r[0] for r in table] == [0.25 * i for i in range(9)]
    assert len(header) == len(table[0])


def test_cli_parser_and_config_resolution():
    args = build_parser().parse_args(["run", "--dof", "1", "--payload", "1.5", "--no-noise", "--duration", "2"])
    cfg = resolve_config(args)
    assert cfg.dof == 1 and cfg.true_payload == 1.5 and cfg.duration == 2.0
    assert not (cfg.sensor_noise or cfg.disturbance or cfg.mass_wobble) and cfg.filter_window == 1
    args = build_parser().parse_args(["sweep", "--payloads", "0,1,2"])
    assert args.payloads == [0.0, 1.0, 2.0]


def test_cli_run_writes_logs(tmp_path, capsys):
    code = main(["run", "--duration", "0.2", "--no-noise", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "nmpc_dof2_p2.csv").exists() and (tmp_path / "msnmpc_dof2_p2.csv").exists()
    assert "RMS F1" in capsys.readouterr().out


def test_cli_sweep_writes_table(tmp_path):
    code = main(["sweep", "--dof", "1", "--duration", "0.2", "--payloads", "0,2", "--out", str(tmp_path)])
    assert code == 0
    assert len((tmp_path / "sweep_dof1.csv").read_text().splitlines()) == 3


def test_cli_reports_configuration_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[nope]\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err
