"""Command-line entry point.

Usage::

    graphene-mep <command> [--config FILE] [--out DIR] [--seed N] [--threads N]

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(including a failed inline check), 3 I/O failure.  Every run that gets past
argument parsing writes ``manifest.json`` into the output directory; failures
also print a one-line JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .commands import COMMANDS, RunContext, _scales
from .config import ConfigError, default_config, load_config
from .errors import DomainError, NumericalError
from .io import write_json_atomic

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3
MAX_SEED = 2 ** 64 - 1


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with the usage code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _threads(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration (defaults apply when omitted)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    common.add_argument("--seed", type=_seed, default=0, help="seed for randomized sampling (u64)")
    common.add_argument("--threads", type=_threads, default=1, help="BLAS/OpenMP thread limit")
    parser = _Parser(prog="graphene-mep", description="Maximum-entropy hydrodynamics of graphene carriers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "tabulate": "tabulate the (A, B) -> (n, u) map and the regime functions",
        "invert": "invert the constraint map for given moment states",
        "regimes": "evaluate X, Y, Z, Z_perp and their asymptotic coefficients",
        "solve-hydro": "integrate the bipolar moment system",
        "solve-dd": "integrate a drift-diffusion model",
        "solve-wave": "integrate the linear-response wave equation",
        "solve-collimation": "refraction of collimated beams (rays and grid)",
        "selftest": "quick consistency checks of the core numerics",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _error_record(kind: str, code: int, exc: BaseException) -> dict:
    return {"status": "error", "kind": kind, "exit_code": code, "type": type(exc).__name__, "message": str(exc)}


def run(args) -> int:
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    clock = time.perf_counter()
    manifest = {
        "command": args.command,
        "code_version": __version__,
        "seed": args.seed,
        "threads": args.threads,
        "started_utc": started,
        "config_path": str(args.config) if args.config else None,
    }
    ctx = None
    code = EXIT_OK
    try:
        cfg = load_config(args.config) if args.config else default_config()
        manifest["config"] = cfg.model_dump(mode="json")
        args.out.mkdir(parents=True, exist_ok=True)
        ctx = RunContext(args.command, args.out, args.seed, _scales(cfg))
        with threadpool_limits(limits=args.threads):
            COMMANDS[args.command](cfg, ctx)
        failed = [k for k, v in ctx.checks.items() if not v["passed"]]
        manifest["status"] = "ok" if not failed else "checks_failed"
        if failed:
            code = EXIT_NUMERICAL
            print(json.dumps({"status": "checks_failed", "exit_code": code, "failed": failed}), file=sys.stderr)
    except ConfigError as exc:
        code = EXIT_USAGE
        manifest["error"] = dict(_error_record("config", code, exc), problems=exc.problems)
    except (NumericalError, DomainError, FloatingPointError) as exc:
        code = EXIT_NUMERICAL
        manifest["error"] = _error_record("numerical", code, exc)
    except OSError as exc:
        code = EXIT_IO
        manifest["error"] = _error_record("io", code, exc)
    if "error" in manifest:
        manifest["status"] = "error"
        print(json.dumps(manifest["error"]), file=sys.stderr)
    if ctx is not None:
        for line in ctx.messages:
            print(line)
        manifest.update(diagnostics=ctx.diagnostics, checks=ctx.checks, outputs=ctx.outputs)
        for name, check in ctx.checks.items():
            print(f"{'PASS' if check['passed'] else 'FAIL'} {name}: {check['value']:.3e} (limit {check['threshold']:.3e})")
    manifest["wall_clock_s"] = time.perf_counter() - clock
    try:
        write_json_atomic(args.out / "manifest.json", _finite(manifest))
    except OSError as exc:
        print(json.dumps(_error_record("io", EXIT_IO, exc)), file=sys.stderr)
        code = code or EXIT_IO
    return code


def _finite(obj):
    """Replace non-finite floats (not representable in JSON) by strings."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
