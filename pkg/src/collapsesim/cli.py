"""Command-line entry point.

Exit codes: 0 when every check passes, 1 when a check fails, 2 on protocol,
configuration or checkpoint errors.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from scipy import constants

from . import analysis
from .kernels import CollapseParams
from .md import checkpoint
from .runner import (
    STAGES,
    WIGNER_CHECKS,
    ConfigError,
    ProtocolError,
    RunConfig,
    Species,
    convert_units,
    run_protocol,
    run_wigner_suite,
)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_ERROR = 0, 1, 2


def _add_config_flags(parser):
    parser.add_argument("--config", help="key = value configuration file")
    for f in dataclasses.fields(RunConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, metavar="VALUE",
                            help=f"override {f.name}")


def _config(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)}
    if args.config:
        return RunConfig.from_file(args.config, **overrides)
    return RunConfig.from_text("", **overrides)


def _print(obj):
    print(json.dumps(obj, indent=2, default=float))


def cmd_equilibrate(args) -> int:
    config = _config(args)
    manifest = run_protocol(config, stages=("equilibrate_left", "equilibrate_right"), log=_log(args))
    _print({r["stage"]: r["temperature"] for r in manifest["stages"]})
    return EXIT_OK


def protocol_checks(summary: dict) -> dict:
    """Pass/fail of the relaxation, restoration and robustness properties."""
    if not summary:
        return {}
    checks = {
        "relaxation": bool(summary["gradient_relaxed"] <= 0.5 * summary["gradient_joined"]),
        "deterministic_restoration": bool(summary["restore_error_deterministic"] < 0.05),
    }
    for mode in ("grw_noise", "dissipative_grw"):
        checks[f"{mode}_restoration"] = bool(summary[f"distance_to_deterministic_{mode}"]
                                              < summary["relaxed_distance_deterministic"])
    return checks


def cmd_protocol(args) -> int:
    config = _config(args)
    stages = tuple(args.stages.split(",")) if args.stages else STAGES
    manifest = run_protocol(config, stages=stages, log=_log(args))
    summary = {k: v for k, v in manifest["summary"].items() if k != "temperature_profiles"}
    checks = protocol_checks(manifest["summary"])
    _print({"summary": summary, "checks": checks})
    return EXIT_OK if all(checks.values()) else EXIT_CHECK_FAILED


def cmd_wigner_suite(args) -> int:
    params = CollapseParams(lam=args.lam, alpha=args.alpha, hbar=args.hbar, mass=args.mass)
    checks = args.checks.split(",") if args.checks else None
    rows = run_wigner_suite(params, checks, csv_path=args.output, comment=f"params={params}")
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['check']}: measured={r['measured']:.10g} analytic={r['analytic']:.10g} "
              f"rel_err={r['relative_error']:.3g}")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_CHECK_FAILED


def cmd_analyze(args) -> int:
    system = checkpoint.load_particles(args.checkpoint)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    comment = f"checkpoint_sha256={checkpoint.file_hash(args.checkpoint)}"
    stem = Path(args.checkpoint).stem
    field = analysis.cic_deposit(system, args.grid_size)
    analysis.write_profile_csv(out / f"{stem}_profile.csv", field.x, analysis.y_averaged_profile(field), comment)
    modes = [(system.time, k, analysis.fourier_mode(system, k)) for k in args.modes]
    analysis.write_mode_csv(out / f"{stem}_modes.csv", modes, comment)
    report = {"n": system.n, "time": system.time, "temperature": analysis.kinetic_temperature(system)}
    if args.factorization:
        value = analysis.factorization_diagnostic(system, rng=args.seed)
        mean, std = analysis.factorization_null(system, rng=args.seed)
        analysis.write_diagnostic_csv(out / f"{stem}_factorization.csv", [(system.time, value, mean)], comment)
        report.update(factorization=value, null_floor=mean, null_std=std)
    _print(report)
    return EXIT_OK


def cmd_convert_units(args) -> int:
    config = _config(args)
    species = Species(sigma=args.sigma, epsilon=args.epsilon, mass=args.species_mass)
    _print(convert_units(config, species))
    return EXIT_OK


def _log(args):
    if getattr(args, "quiet", False):
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collapsesim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("equilibrate", help="prepare the two half systems")
    _add_config_flags(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_equilibrate)

    p = sub.add_parser("protocol", help="run the join, forward, reverse and rerun stages")
    _add_config_flags(p)
    p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("wigner-suite", help="phase-space solver checks against analytic laws")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--hbar", type=float, default=0.5)
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--checks", help=f"comma-separated subset of {','.join(WIGNER_CHECKS)}")
    p.add_argument("--output", help="CSV report path")
    p.set_defaults(func=cmd_wigner_suite)

    p = sub.add_parser("analyze", help="profiles, Fourier modes and diagnostics of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--output-dir", default=".")
    p.add_argument("--grid-size", type=int, default=128)
    p.add_argument("--modes", type=lambda s: [int(v) for v in s.split(",")], default=[1, 4, 14])
    p.add_argument("--factorization", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("convert-units", help="SI values for a Lennard-Jones species (default argon)")
    _add_config_flags(p)
    p.add_argument("--sigma", type=float, default=3.4e-10, help="length scale in m")
    p.add_argument("--epsilon", type=float, default=120.0 * constants.k, help="energy scale in J")
    p.add_argument("--mass", dest="species_mass", type=float, default=39.948 * constants.atomic_mass,
                   help="particle mass in kg")
    p.set_defaults(func=cmd_convert_units)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ProtocolError, ConfigError, checkpoint.CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
