"""Command line: ``gvi run``, ``gvi validate``, ``gvi list-experiments``.

Exit codes are 0 on success, 1 for configuration problems and 2 when the
run itself fails.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, ParseError
from . import config as cfgmod
from . import runner

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _describe(err) -> str:
    if isinstance(err, ParseError):
        return f"parse error at line {err.line}, column {err.column}: {err.message}"
    if isinstance(err, ConfigError):
        return f"{err.field}: {err.message}"
    return str(err)


def cmd_run(args) -> int:
    try:
        config = cfgmod.load(args.config)
    except (ParseError, ConfigError) as err:
        print(f"error: {_describe(err)}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        if args.seed < 0:
            print("error: seed: must be a nonnegative integer", file=sys.stderr)
            return EXIT_CONFIG
        config = config.with_seed(args.seed)
    try:
        rows = runner.run(config, args.jobs)
        csv_path, json_path = runner.write_results(config, rows, args.out or config.output)
    except Exception as exc:  # noqa: BLE001 - anything here is a runtime failure
        print(f"error: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    failed = sum(1 for r in rows if r.metric == "failed")
    print(f"wrote {len(rows)} rows to {csv_path} ({failed} failed replicates)")
    if failed and failed == len(config.seeds()):
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        errors = cfgmod.validate(args.config)
    except ParseError as err:
        print(f"error: {_describe(err)}", file=sys.stderr)
        return EXIT_CONFIG
    if errors:
        for err in errors:
            print(f"error: {_describe(err)}", file=sys.stderr)
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in cfgmod.EXPERIMENTS:
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gvi", description="Generalized variational inference experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (default: the config's output field)")
    p_run.add_argument("--seed", type=int, help="override the base seed")
    p_run.add_argument("--jobs", type=int, default=1, help="worker processes (GVI_JOBS overrides)")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)

    p_list = sub.add_parser("list-experiments", help="print the available experiments")
    p_list.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
