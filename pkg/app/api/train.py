"""
train: one training run with bound tracking.
"""
from __future__ import annotations

import argparse
import logging

from app.api import load_config, output_dir
from app.services.training import RunResult, train

logger = logging.getLogger("gensmooth.api.train")


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train the configured model and write trace.csv")
    parser.set_defaults(handler=run_train)


def run_train(args: argparse.Namespace) -> RunResult:
    config = load_config(args)
    result = train(config, output_dir(config, "train"))
    print(result.run_dir.root)
    return result
