"""
analyze: per-sample structural reports and bounds for a checkpoint.
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

from app.api import load_config, output_dir
from app.models.experiment import ExperimentConfig
from app.services.diagnostics import DiagnosticPass, diagnose
from app.services.network import load_theta
from app.services.trace_store import write_table
from app.services.training import build_model, load_dataset

logger = logging.getLogger("gensmooth.api.analyze")

ANALYZE_FILE = "analyze.csv"
ANALYZE_COLUMNS = (
    "sample",
    "loss",
    "loss_gap",
    "lower_bound",
    "upper_bound",
    "lambda_min",
    "lambda_max",
    "U",
    "L",
    "D",
    "S",
    "local_grad_norm",
    "degenerate",
    "within_bounds",
)


def register(subparsers) -> None:
    parser = subparsers.add_parser("analyze", help="Bounds report for every sample at a checkpoint")
    parser.add_argument("--checkpoint", required=True, help="theta_<step>.bin written by train")
    parser.add_argument("--limit", type=int, help="Analyze only the first N samples")
    parser.set_defaults(handler=run_analyze)


def analyze_rows(result: DiagnosticPass) -> list[dict]:
    rows = []
    for index, report in enumerate(result.reports):
        rows.append(
            {
                "sample": index,
                "loss": report.loss,
                "loss_gap": report.loss_gap,
                "lower_bound": report.lower_bound,
                "upper_bound": report.upper_bound,
                "lambda_min": report.lambda_min,
                "lambda_max": report.lambda_max,
                "U": report.U,
                "L": report.L,
                "D": report.D,
                "S": report.S,
                "local_grad_norm": report.local_grad_norm_r,
                "degenerate": report.degenerate,
                "within_bounds": report.sandwich_ok,
            }
        )
    s = result.structure
    rows.append(
        {
            "sample": "all",
            "loss": result.mean_loss,
            "loss_gap": result.mean_loss_gap,
            "lower_bound": result.lower,
            "upper_bound": result.upper,
            "lambda_min": s.lambda_min,
            "lambda_max": s.lambda_max,
            "U": s.U,
            "L": s.L,
            "D": s.D,
            "S": s.S,
            "local_grad_norm": result.local_grad_norm,
            "degenerate": s.degenerate,
            "within_bounds": result.lower <= result.mean_loss_gap <= result.upper,
        }
    )
    return rows


def analyze_checkpoint(config: ExperimentConfig, checkpoint: str | Path, out_dir: str | Path, limit: int | None = None) -> Path:
    data = load_dataset(config)
    if limit is not None:
        data = data.take(range(min(limit, data.n)))
    model, _ = build_model(config, data)
    theta = load_theta(checkpoint, expected_count=model.parameter_count)
    d = config.diagnostics
    result = diagnose(
        config.loss_spec(), model, theta, data.inputs, data.targets, weights=d.weights, floor=d.eig_floor, log_base=d.log_base
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / ANALYZE_FILE
    write_table(path, ANALYZE_COLUMNS, analyze_rows(result))
    outside = sum(not r.sandwich_ok for r in result.reports if not r.degenerate)
    logger.info("analyze: %d samples, %d non-degenerate outside their bounds", len(result.reports), outside)
    return path


def run_analyze(args: argparse.Namespace) -> Path:
    config = load_config(args)
    path = analyze_checkpoint(config, args.checkpoint, output_dir(config, "analyze"), args.limit)
    print(path)
    return path
