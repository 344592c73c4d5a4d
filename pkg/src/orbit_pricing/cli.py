"""Command line entry point: ``orbit run | verify | slope``.

Exit codes: 0 success, 2 configuration error, 3 numerical or structural failure.
"""
import argparse
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError, OrbitError, RepetitionError
from .harness import ExperimentConfig, build_instance, emit, fit_loglog_slope, fmt, read_summary, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def load_config(path, **overrides):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_mapping(data)


def _print_kv(d, prefix=""):
    for k, v in d.items():
        if isinstance(v, dict):
            _print_kv(v, f"{prefix}{k}.")
        else:
            print(f"{prefix}{k} = {fmt(v)}")


def cmd_run(args):
    cfg = load_config(args.config, repetitions=args.reps, master_seed=args.seed)
    result = run(cfg)
    emit(result, args.out)
    for row in result.summary:
        print(f"T={row['T']} median={fmt(row['median'])} iqr={fmt(row['iqr'])}")
    return EXIT_OK


def cmd_verify(args):
    cfg = load_config(args.config)
    if args.what == "structure":
        from .verify import structure_report
        report = structure_report(build_instance(cfg))
        sys.stdout.write(report.to_text())
        return EXIT_OK if all(report.flags.values()) else EXIT_NUMERIC
    from .hard_instance import HardFamily, family_checks
    fam = HardFamily(beta=cfg.beta, gamma=cfg.hi_gamma, kappa=cfg.kappa, T_nominal=cfg.T_nominal,
                     epsilon0=cfg.epsilon0)
    checks = family_checks(fam, seed=cfg.omega_seed)
    _print_kv(checks)
    return EXIT_OK if checks["pass"] else EXIT_NUMERIC


def cmd_slope(args):
    slope, intercept, r2 = fit_loglog_slope(read_summary(args.summary))
    print(f"slope = {fmt(slope)}")
    print(f"intercept = {fmt(intercept)}")
    print(f"r2 = {fmt(r2)}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="orbit", description="Contextual dynamic pricing simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment and write CSVs")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--reps", type=int)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="numerical structure checks")
    v.add_argument("what", choices=("structure", "hard-instance"))
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_verify)
    s = sub.add_parser("slope", help="log-log slope of median regret in a summary.csv")
    s.add_argument("--summary", required=True)
    s.set_defaults(func=cmd_slope)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RepetitionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc.cause, ConfigurationError) else EXIT_NUMERIC
    except (ConfigurationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OrbitError, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
