"""
loss-sweep and block-sweep: repeated training runs over losses or depths.
"""
from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from app.api import load_config, output_dir
from app.models.experiment import ExperimentConfig
from app.services.trace_store import write_table
from app.services.training import RunResult, load_dataset, train

logger = logging.getLogger("gensmooth.api.sweeps")

LOSS_SWEEP_FILE = "loss_sweep.csv"
BLOCK_SWEEP_FILE = "block_sweep.csv"
RUN_COLUMNS = (
    "initial_loss",
    "final_loss",
    "train_accuracy",
    "diagnostic_rows",
    "lower_violation_rate",
    "upper_violation_rate",
    "indicator_violations",
    "median_pearson_upper",
    "median_pearson_lower",
    "final_U",
    "final_L",
)
LOSS_SWEEP_COLUMNS = ("loss",) + RUN_COLUMNS
BLOCK_SWEEP_COLUMNS = ("k", "skip") + RUN_COLUMNS


def register(subparsers) -> None:
    loss = subparsers.add_parser("loss-sweep", help="Train once per loss in sweep.losses")
    loss.set_defaults(handler=run_loss_sweep)
    block = subparsers.add_parser("block-sweep", help="Train plain and skip variants for each k in sweep.k_list")
    block.add_argument("--k-list", help="Comma-separated block counts, overrides sweep.k_list")
    block.set_defaults(handler=run_block_sweep)


def _run_row(result: RunResult) -> dict:
    s = result.summary
    last = result.records[-1] if result.records else None
    return {
        "initial_loss": s["initial_loss"],
        "final_loss": s["final_loss"],
        "train_accuracy": s["train_accuracy"],
        "diagnostic_rows": result.tally.rows,
        "lower_violation_rate": result.tally.rate(result.tally.lower_violations),
        "upper_violation_rate": result.tally.rate(result.tally.upper_violations),
        "indicator_violations": result.tally.indicator_violations,
        "median_pearson_upper": s["median_pearson_upper"],
        "median_pearson_lower": s["median_pearson_lower"],
        "final_U": last.U if last else None,
        "final_L": last.L if last else None,
    }


def loss_sweep(config: ExperimentConfig, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    rows = []
    for label in config.sweep.losses:
        result = train(config, out_dir / label, loss_label=label)
        rows.append({"loss": label, **_run_row(result)})
        logger.info(
            "sweeps: %s lower violations %.3f upper violations %.3f",
            label,
            rows[-1]["lower_violation_rate"],
            rows[-1]["upper_violation_rate"],
        )
    path = out_dir / LOSS_SWEEP_FILE
    write_table(path, LOSS_SWEEP_COLUMNS, rows)
    return path


def block_sweep(config: ExperimentConfig, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    data = load_dataset(config)
    base = config.model_config_for(data.input_dim, data.class_count)
    rows = []
    for k in config.sweep.k_list:
        for skip in (False, True):
            variant = "skip" if skip else "plain"
            model_config = replace(base, block_count=k, skip_connections=skip)
            result = train(config, out_dir / f"k{k}_{variant}", model_config=model_config)
            rows.append({"k": k, "skip": skip, **_run_row(result)})
    path = out_dir / BLOCK_SWEEP_FILE
    write_table(path, BLOCK_SWEEP_COLUMNS, rows)
    return path


def run_loss_sweep(args: argparse.Namespace) -> Path:
    config = load_config(args)
    out_dir = output_dir(config, "loss_sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = loss_sweep(config, out_dir)
    print(path)
    return path


def run_block_sweep(args: argparse.Namespace) -> Path:
    config = load_config(args, **({"sweep.k_list": args.k_list} if args.k_list else {}))
    out_dir = output_dir(config, "block_sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = block_sweep(config, out_dir)
    print(path)
    return path
