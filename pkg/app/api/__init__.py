"""CLI subcommands

Each module exposes `register(subparsers)` and a `run_*` handler that
receives the parsed arguments.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from app.config import get_settings
from app.models.experiment import ExperimentConfig, load_experiment_config


def load_config(args: argparse.Namespace, **overrides: object) -> ExperimentConfig:
    """Config file plus --seed / --out and any command-specific overrides."""
    flat: dict[str, object] = dict(overrides)
    if getattr(args, "seed", None) is not None:
        flat["seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        flat["output_dir"] = args.out
    return load_experiment_config(getattr(args, "config", None), flat)


def output_dir(config: ExperimentConfig, command: str) -> Path:
    if config.output_dir:
        return Path(config.output_dir)
    return Path(get_settings().output_root) / command
