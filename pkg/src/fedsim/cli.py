"""Command line: ``fedsim run <config> --out <path> [--seed N]`` and ``fedsim schema``.

Exit codes: 0 success, 2 invalid config, 3 data error, 4 runtime error. On
failure a JSON error object is written to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import report
from .config import ConfigError, load_config
from .data import DataError
from .runner import run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _error(code: int, kind: str, message: str, **extra) -> int:
    payload = {"error": {"kind": kind, "message": message, "exit_code": code, **extra}}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def cmd_run(config_path: str, out_path: str, seed: int | None = None) -> int:
    try:
        cfg = load_config(config_path, seed_override=seed)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "config", exc.message, field=exc.path)
    base_dir = os.path.dirname(os.path.abspath(config_path))
    try:
        doc = run_experiment(cfg, base_dir)
    except DataError as exc:
        extra = {k: v for k, v in (("row", exc.row), ("column", exc.column)) if v is not None}
        return _error(EXIT_DATA, "data", str(exc), **extra)
    except Exception as exc:  # noqa: BLE001 - surfaced as a structured runtime error
        return _error(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")
    try:
        with open(out_path, "w") as fh:
            fh.write(report.dumps(doc))
    except OSError as exc:
        return _error(EXIT_RUNTIME, "runtime", f"cannot write report: {exc}")
    return EXIT_OK


def cmd_schema() -> int:
    sys.stdout.write(report.dumps(report.report_schema()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim", description="Seeded federated learning experiments with differential privacy."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a YAML config")
    run.add_argument("config", help="path to the experiment config")
    run.add_argument("--out", required=True, help="where to write the JSON report")
    run.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    sub.add_parser("schema", help="print the JSON schema of the report")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        return cmd_schema()
    return cmd_run(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
