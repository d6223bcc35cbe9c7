"""Command-line entry point: ``airhockey-harness <scenario> [--config PATH] [--out DIR] [--seed N] [--workers N]``.

On success a one-line JSON summary goes to stdout and the exit code is 0. On
failure a one-line JSON object ``{"error": type, "message": ..., "path": ...,
"line": ...}`` goes to stderr and the exit code is 2 for bad configs and 1 for
anything else.
"""
from __future__ import annotations

import argparse
import json
import sys

from ..config import read_kv
from ..errors import AirHockeyError, ConfigError
from .scenarios import KINDS, RUNNERS


def build_parser():
    parser = argparse.ArgumentParser(prog="airhockey-harness", description="Run desk-scale air hockey experiments.")
    parser.add_argument("scenario", choices=KINDS)
    parser.add_argument("--config", metavar="PATH", help="airhockey-kv scenario config; defaults apply when omitted")
    parser.add_argument("--out", metavar="DIR", default="out", help="report directory (default: out)")
    parser.add_argument("--seed", metavar="N", type=int, default=0)
    parser.add_argument("--workers", metavar="N", type=int, default=1)
    return parser


def _error_line(exc):
    err = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        err["path"] = None if exc.path is None else str(exc.path)
        err["line"] = exc.line
    return json.dumps(err)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if hasattr(x, "item"):
        return x.item()
    return x


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        kv = read_kv(args.config) if args.config else None
        summary = RUNNERS[args.scenario](kv, args.out, args.seed, args.workers)
    except ConfigError as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2
    except (AirHockeyError, OSError, ValueError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 1
    print(json.dumps({"scenario": args.scenario, "out": args.out, "seed": args.seed, **_jsonable(summary)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
