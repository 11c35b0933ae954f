"""
gensmooth - generalized-smoothness bound tracking
Command-line entry point
"""
from __future__ import annotations

import argparse
import logging
import sys

from app.api import analyze, depth_sweep, gic, report, sweeps, train
from app.config import get_settings
from app.services.errors import EXIT_OK, EXIT_UNEXPECTED, ConfigError, exit_code_for, to_user_message

logger = logging.getLogger("gensmooth.main")

COMMANDS = (train, analyze, depth_sweep, gic, report, sweeps)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gensmooth", description="Train models and track generalized-smoothness bounds.")
    parser.add_argument("--config", help="Flat key-value experiment config file")
    parser.add_argument("--seed", type=int, help="Run seed, overrides the config")
    parser.add_argument("--out", help="Output directory, overrides output_dir")
    parser.add_argument("--threads", type=int, help="Worker threads for per-sample diagnostics")
    parser.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="Defaults to GENSMOOTH_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    logging.basicConfig(
        level=args.log_level or settings.log_level,
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
    )
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1", key_path="threads")
            settings.threads = args.threads
        args.handler(args)
    except Exception as exc:
        code = exit_code_for(exc)
        if code == EXIT_UNEXPECTED:
            logger.exception("main: %s failed", args.command)
        else:
            logger.debug("main: %s failed: %r", args.command, exc)
        print(to_user_message(exc), file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
