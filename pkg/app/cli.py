"""Command-line entry point: ``python -m app.cli {run,table1,plot}``.

Exit codes: 0 ok, 2 configuration error, 3 infeasible dual control,
4 calibration failure.
"""
from pathlib import Path
from typing import List, Optional
import argparse
import json
import logging
import sys

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ConfigError, LabError
from app.core.logging import setup_logging
from app.core.telemetry import setup_telemetry
from app.experiments.config_io import load_config
from app.experiments.runner import csv_text, emit_plot_data, run, table1

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="habit-duality-lab",
        description="Monte Carlo welfare-loss bounds for consumption with multiplicative habit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value experiment file")
    common.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--out", type=Path, help="output path (default: stdout)")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--backend", choices=["analytic", "nested", "both"],
                        help="conditional-expectation backend")

    sub.add_parser("run", parents=[common], help="single experiment, JSON report")
    t1 = sub.add_parser("table1", parents=[common], help="welfare-loss sweep, CSV")
    t1.add_argument("--parallel", action="store_true", help="run sweep cells concurrently")
    sub.add_parser("plot", parents=[common], help="per-time quantile paths, CSV")
    return parser


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        out.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot write {out}: {e}") from e


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(level=settings.log_level)
    setup_telemetry()

    try:
        config = load_config(
            args.config, args.assignments,
            seed=args.seed, threads=args.threads, condexp_backend=args.backend,
        )
        if args.command == "run":
            report = run(config)
            _emit(json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2) + "\n", args.out)
        elif args.command == "table1":
            frame = table1(config, out=args.out, parallel=args.parallel)
            if args.out is None:
                sys.stdout.write(csv_text(frame))
        else:
            frame = emit_plot_data(config, out=args.out)
            if args.out is None:
                sys.stdout.write(csv_text(frame))
    except ValidationError as e:
        logger.error("Invalid configuration", extra={"errors": e.errors(include_url=False)})
        print(f"error: invalid configuration\n{e}", file=sys.stderr)
        return 2
    except LabError as e:
        logger.error("Experiment failed", extra={"error_type": type(e).__name__, "error": str(e)})
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
