"""Command-line entry point: ``run``, ``sweep`` and ``selftest``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .dynamics import ConfigurationError
from .harness.config import SimConfig, load_config
from .harness.export import plot_logs, write_log_csv, write_table_csv
from .harness.metrics import DEFAULT_PAYLOADS, compute_metrics, sweep_payloads, sweep_table
from .harness.simulation import run_controllers

log = logging.getLogger("exompc")

NOISE_FREE = dict(mass_wobble=False, disturbance=False, sensor_noise=False, mass_ramp=False, filter_window=1)


def _payload_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad payload list {text!r}") from exc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dof", type=int, choices=(1, 2), default=None)
    p.add_argument("--controller", choices=("nmpc", "msnmpc", "both"), default=None)
    p.add_argument("--duration", type=float, default=None, help="simulated time [s]")
    p.add_argument("--config", type=Path, default=None, help="INI-style parameter file")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--no-noise", action="store_true",
                   help="switch off every uncertainty source and the sensor averaging")
    p.add_argument("--threads", type=int, default=None, help="workers for scenario solves / sweep cases")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="exompc", description="Robust NMPC exoskeleton simulation workbench")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one payload case")
    _common(run)
    run.add_argument("--payload", type=float, default=None, help="true payload [kg]")
    run.add_argument("--plot", action="store_true", help="also write PNG charts (needs matplotlib)")

    sweep = sub.add_parser("sweep", help="run both controllers over a list of payloads")
    _common(sweep)
    sweep.add_argument("--payloads", type=_payload_list, default=None,
                       help="comma-separated payloads [kg] (default 0 to 2 in 0.25 steps)")

    sub.add_parser("selftest", help="run the numerical invariant checks")
    return ap


def resolve_config(args: argparse.Namespace) -> SimConfig:
    dof = args.dof or 2
    base = SimConfig() if dof == 2 else SimConfig.single_joint()
    cfg = load_config(args.config, base) if args.config else base
    if args.dof is not None and cfg.dof != args.dof:
        raise ConfigurationError("--dof disagrees with the config file")
    changes = {}
    if args.controller:
        changes["controller"] = args.controller
    if args.duration is not None:
        changes["duration"] = args.duration
    if args.out is not None:
        changes["out_dir"] = str(args.out)
    if args.threads is not None:
        changes["threads"] = args.threads
    if getattr(args, "payload", None) is not None:
        changes["true_payload"] = args.payload
    if args.no_noise:
        changes.update(NOISE_FREE)
    return cfg.with_(**changes)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    logs = run_controllers(cfg)
    for name, lg in logs.items():
        path = write_log_csv(lg, out / f"{name}_dof{cfg.dof}_p{cfg.true_payload:g}.csv")
        m = compute_metrics(lg, cfg.settle)
        mu = " ".join(f"{v:.2f}" for v in m.mu_mean) if name == "msnmpc" else "-"
        print(f"{name:7s} RMS F1 {m.rms_F1:7.3f} N  RMS F2 {m.rms_F2:7.3f} N  "
              f"dmax {' '.join(f'{d:.3f}' for d in m.delta_max)} deg  mu% {mu}  "
              f"{m.mean_ms:.2f} ms/step  -> {path}")
        if lg.aborted:
            print(f"{name}: run aborted early, see log", file=sys.stderr)
    if args.plot:
        try:
            for p in plot_logs(logs, out):
                print(f"plot -> {p}")
        except ImportError:
            print("matplotlib is not installed; skipping plots", file=sys.stderr)
    return 1 if any(lg.aborted for lg in logs.values()) else 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    payloads = args.payloads or list(DEFAULT_PAYLOADS)
    rows = sweep_payloads(cfg, payloads, workers=cfg.threads)
    header, table = sweep_table(rows, cfg.dof)
    path = write_table_csv(header, table, Path(cfg.out_dir) / f"sweep_dof{cfg.dof}.csv")
    print("  ".join(f"{h:>10s}" for h in header[:5]))
    for row in table:
        print("  ".join(f"{v:10.3f}" for v in row[:5]))
    print(f"table -> {path}")
    return 0


def _cmd_selftest(args: argparse.Namespace) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "selftest": _cmd_selftest}
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
