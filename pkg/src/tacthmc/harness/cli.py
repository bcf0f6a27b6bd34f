"""Command-line entry point.

    tacthmc sample   [CONFIG] [--section.key=value ...] [--workers N]
    tacthmc ablate   [CONFIG] ...      # full / no_thermostat / no_tempering
    tacthmc compare  [CONFIG] ...      # TACT-HMC plus grid-tuned baselines
    tacthmc diagnose OUTPUT_DIR        # recompute report.csv from stored CSVs

Exit codes: 0 success, 2 configuration error, 3 a chain diverged,
4 a diagnostics threshold failed.
"""

import argparse
import os
import sys

from ..errors import ConfigError, DivergenceError, TactError
from .config import parse_config
from .runner import diagnose_directory, run_ablation, run_comparison, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_THRESHOLD = 0, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="tacthmc", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (("sample", "run one experiment"),
                            ("ablate", "run the three-variant ablation matrix"),
                            ("compare", "run TACT-HMC against tuned baselines")):
        sp = sub.add_parser(name, help=help_text,
                            epilog="Any config key can be overridden as --section.key=value.")
        sp.add_argument("config", nargs="?", help="config file (omit for all defaults)")
        sp.add_argument("--workers", type=int, default=None,
                        help="worker processes for chains (default: run.workers, 0 = all CPUs)")
        sp.add_argument("--output-dir", default=None, help="shorthand for --run.output_dir")
    dp = sub.add_parser("diagnose", help="recompute diagnostics from an output directory")
    dp.add_argument("output_dir")
    dp.add_argument("--config", default=None, help="config to use instead of the manifest")
    return p


def _split_overrides(extra):
    overrides, bad = [], []
    i = 0
    while i < len(extra):
        arg = extra[i]
        if arg.startswith("--") and "." in arg.split("=", 1)[0]:
            if "=" in arg:
                overrides.append(arg[2:])
            elif i + 1 < len(extra):
                overrides.append(f"{arg[2:]}={extra[i + 1]}")
                i += 1
            else:
                bad.append(arg)
        else:
            bad.append(arg)
        i += 1
    return overrides, bad


def _print_report(title, report):
    print(f"== {title}")
    print(report.to_text())


def main(argv=None):
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    overrides, bad = _split_overrides(extra)
    if bad:
        parser.print_usage(sys.stderr)
        print(f"tacthmc: error: unrecognised arguments: {' '.join(bad)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "diagnose":
            if overrides:
                raise ConfigError("diagnose takes no --section.key overrides")
            spec = parse_config(args.config) if args.config else None
            if not os.path.isdir(args.output_dir):
                raise ConfigError(f"no such output directory: {args.output_dir}")
            report = diagnose_directory(args.output_dir, spec)
            report.to_csv(os.path.join(args.output_dir, "report.csv"))
            _print_report(args.output_dir, report)
            return EXIT_OK if report.passed else EXIT_THRESHOLD
        if args.output_dir is not None:
            overrides.append(f"run.output_dir={args.output_dir!r}")
        spec = parse_config(args.config, overrides)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "sample":
            manifest = run_experiment(spec, workers=args.workers)
            _print_report(manifest.output_dir, manifest.report)
            diverged = bool(manifest.divergences)
            passed = manifest.report.passed
        elif args.command == "ablate":
            manifests, summary = run_ablation(spec, workers=args.workers)
            _print_report("ablation", summary)
            diverged = any(m.divergences for m in manifests.values())
            passed = summary.passed
        else:
            manifests, summary = run_comparison(spec, workers=args.workers)
            _print_report("comparison", summary)
            diverged = any(m.divergences for m in manifests.values())
            passed = summary.passed
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except TactError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if diverged:
        return EXIT_DIVERGED
    return EXIT_OK if passed else EXIT_THRESHOLD


if __name__ == "__main__":
    sys.exit(main())
