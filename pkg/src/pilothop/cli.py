"""Command-line entry point: ``pilothop simulate`` and ``pilothop estimate``.

Exit codes: 0 on success, 2 for bad arguments or configuration, 3 for file
I/O failures, 4 when the estimator cannot produce a result.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .frame import system_config_from_mapping
from .harness import (
    PRESETS,
    ExperimentConfig,
    csv_text,
    estimate_window,
    preset,
    run_sweep,
    write_csv,
)
from .numerics import DegenerateError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ESTIMATOR = 0, 2, 3, 4

log = logging.getLogger("pilothop")


class ConfigError(ValueError):
    pass


_EXPERIMENT_KEYS = {
    "n_sch": int,
    "n_t": int,
    "f_d_hz": float,
    "snr_db_list": lambda s: _float_list(s),
    "n_trials": int,
    "estimator": str,
    "esprit_mode": str,
    "beta": int,
    "nu": int,
    "seed": int,
    "profile_path": str,
}


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def load_experiment_config(path) -> ExperimentConfig:
    """Read an INI file with optional ``[system]`` and ``[experiment]`` sections."""
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with path.open() as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(parser.sections()) - {"system", "experiment"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    kwargs = {}
    try:
        if parser.has_section("system"):
            kwargs["system"] = system_config_from_mapping(dict(parser["system"]), str(path))
        for key, raw in parser["experiment"].items() if parser.has_section("experiment") else ():
            if key not in _EXPERIMENT_KEYS:
                raise ConfigError(f"{path}: unknown experiment key {key!r}")
            kwargs["f_d" if key == "f_d_hz" else key] = _EXPERIMENT_KEYS[key](raw)
        if "profile_path" in kwargs:
            kwargs["profile_path"] = str((path.parent / kwargs["profile_path"]).resolve())
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _add_common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS), help="figure sweep to reproduce")
    src.add_argument("--config", help="INI file with [system] and [experiment] sections")
    p.add_argument("--profile", help="channel profile table (delay_ns power_db per line)")
    p.add_argument("--doppler-hz", type=float, help="maximum Doppler frequency")
    p.add_argument("--n-t", type=int, help="pilot-bearing symbols per window")
    p.add_argument("--n-sch", type=int, help="subchannels per user")
    p.add_argument("--esprit", choices=["ls", "tls"], type=str.lower)
    p.add_argument("--beta", type=int, help="support window half-width (0..5)")
    p.add_argument("--nu", type=int, help="pilot hop: 3 for user A, -3 for user B")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilothop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="NMSE vs SNR sweep, CSV output")
    _add_common(sim)
    sim.add_argument("--snr-list", type=_float_list, help="SNR points in dB, e.g. '0,10,20'")
    sim.add_argument("--estimator", choices=["ph", "ll", "both"], type=str.lower)
    sim.add_argument("--trials", type=int, help="trials per SNR point")
    sim.add_argument("--workers", type=int, default=1, help="worker processes")
    sim.add_argument("--out", help="CSV path (default: stdout)")

    est = sub.add_parser("estimate", help="run the delay estimator on one window")
    _add_common(est)
    est.add_argument("--dump-delays", action="store_true",
                     help="print 'eta_hat L_hat tau_0 ... tau_{L-1}'")
    est.add_argument("--snr-db", type=float, default=30.0)
    est.add_argument("--trial", type=int, default=0, help="window index within the seed")
    return parser


def _base_config(args) -> ExperimentConfig:
    if args.config:
        try:
            cfg = load_experiment_config(args.config)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
    else:
        cfg = ExperimentConfig()
    if args.profile:
        if not Path(args.profile).is_file():
            raise OSError(f"cannot read profile {args.profile}")
        cfg = replace(cfg, profile_path=args.profile)
    return cfg


def _overrides(args) -> dict:
    out = {
        "f_d": args.doppler_hz,
        "n_t": args.n_t,
        "n_sch": args.n_sch,
        "esprit_mode": args.esprit,
        "beta": args.beta,
        "nu": args.nu,
        "seed": args.seed,
    }
    for name, field in (("snr_list", "snr_db_list"), ("estimator", "estimator"), ("trials", "n_trials")):
        out[field] = getattr(args, name, None)
    return {k: v for k, v in out.items() if v is not None}


def resolve_configs(args) -> list:
    """Configs to run: one per preset curve, or a single one."""
    base = _base_config(args)
    over = _overrides(args)
    try:
        if args.preset:
            return preset(args.preset, base, **over)
        return [replace(base, **over)]
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _simulate(args) -> int:
    records = []
    for cfg in resolve_configs(args):
        log.info("sweep n_t=%d f_d=%g n_sch=%d", cfg.n_t, cfg.f_d, cfg.n_sch)
        records.extend(run_sweep(cfg, workers=args.workers))
    if args.out:
        write_csv(records, args.out)
    else:
        sys.stdout.write(csv_text(records))
    return EXIT_OK


def _estimate(args) -> int:
    cfgs = resolve_configs(args)
    for cfg in cfgs:
        de = estimate_window(cfg, args.snr_db, args.trial)
        if args.dump_delays:
            print(de.to_record())
        else:
            print(f"eta_hat={de.eta_hat:.6f} L_hat={de.order_L_hat} beta={de.beta}")
            print("taus:", " ".join(f"{t:.3f}" for t in de.taus))
            print("support:", " ".join(str(int(s)) for s in de.support))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = _simulate if args.command == "simulate" else _estimate
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"pilothop: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"pilothop: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DegenerateError as exc:
        print(f"pilothop: estimator failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR


if __name__ == "__main__":
    sys.exit(main())
