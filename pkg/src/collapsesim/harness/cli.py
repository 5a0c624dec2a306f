"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 runtime or numerical
failure, 3 verify-suite failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import __version__
from ..units import CGS, DIMENSIONS, reference_couplings

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def _cmd_run(args) -> int:
    from .config import ConfigError, load_config
    from .runner import run_experiment, write_output
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        config = load_config(text).with_overrides(args.seed, args.output, args.format)
    except ConfigError as exc:
        print(f"{exc.kind}:", file=sys.stderr)
        for problem in exc.errors:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        result = run_experiment(config, workers=args.workers)
    except (RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"runtime-error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = write_output(result)
    if config.output.path is None:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import CHECKS, verify_suite
    if args.list:
        print("\n".join(CHECKS))
        return EXIT_OK
    subset = None
    if args.subset is not None:
        subset = [name for part in args.subset for name in part.split(",") if name]
    try:
        report = verify_suite(subset, scale=args.scale, fault=args.fault,
                              on_result=lambda r: print(r.line(), flush=True))
    except ValueError as exc:
        print(f"validation-error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    n_pass = sum(r.passed for r in report.results)
    print(f"{n_pass}/{len(report.results)} checks passed")
    if args.output:
        Path(args.output).write_text(json.dumps(
            {"checks": [r.to_dict() for r in report.results], "passed": report.passed},
            sort_keys=True, indent=2) + "\n")
    return EXIT_OK if report.passed else EXIT_VERIFY


def _cmd_schema(args) -> int:
    from .config import SCHEMA
    print(json.dumps(SCHEMA, indent=2))
    return EXIT_OK


def _cmd_convert(args) -> int:
    if args.kind is None:
        print(json.dumps({"natural_units": CGS.header(), "reference": reference_couplings(),
                          "kinds": sorted(DIMENSIONS)}, indent=2, sort_keys=True))
        return EXIT_OK
    if args.value is None:
        print("validation-error: convert-units needs a VALUE after KIND", file=sys.stderr)
        return EXIT_VALIDATION
    if args.kind not in DIMENSIONS:
        print(f"validation-error: unknown kind {args.kind!r}; known: {sorted(DIMENSIONS)}",
              file=sys.stderr)
        return EXIT_VALIDATION
    fn = CGS.to_natural if args.to == "natural" else CGS.to_cgs
    print(repr(fn(args.value, args.kind)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collapsesim",
                                     description="GRW and CSL collapse trajectory simulator")
    parser.add_argument("--version", action="version", version=f"collapsesim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment configuration")
    run.add_argument("config", help="YAML or JSON configuration file")
    run.add_argument("--seed", type=int, help="override ensemble.master_seed")
    run.add_argument("--workers", type=int, default=1, help="worker processes")
    run.add_argument("--output", help="output file (default: stdout)")
    run.add_argument("--format", choices=("table", "tree"), help="override output.format")
    run.set_defaults(func=_cmd_run)

    ver = sub.add_parser("verify", help="run the self-verification suite")
    ver.add_argument("--subset", action="append",
                     help="check name(s), comma separated; repeatable")
    ver.add_argument("--scale", choices=("quick", "full"), default="quick")
    ver.add_argument("--fault", choices=("lambda-scale",),
                     help="inject a deliberate fault to exercise the suite")
    ver.add_argument("--list", action="store_true", help="list check names and exit")
    ver.add_argument("--output", help="also write the report as JSON")
    ver.set_defaults(func=_cmd_verify)

    sch = sub.add_parser("schema", help="print the configuration schema")
    sch.set_defaults(func=_cmd_schema)

    conv = sub.add_parser("convert-units", help="convert between natural units and CGS")
    conv.add_argument("kind", nargs="?", help=f"one of {', '.join(sorted(DIMENSIONS))}")
    conv.add_argument("value", nargs="?", type=float)
    conv.add_argument("--to", choices=("natural", "cgs"), default="natural")
    conv.set_defaults(func=_cmd_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
