"""
report: SVG charts and summary.md for a finished run directory.
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

from app.models.experiment import ExperimentConfig, load_experiment_config
from app.services.charts import render_charts, summary_markdown
from app.services.trace_store import RESOLVED_CONFIG_FILE, SUMMARY_FILE, TRACE_FILE, read_summary, read_trace

logger = logging.getLogger("gensmooth.api.report")

SUMMARY_MARKDOWN = "summary.md"


def register(subparsers) -> None:
    parser = subparsers.add_parser("report", help="Render charts for a run directory")
    parser.add_argument("run_dir", help="Directory written by train")
    parser.set_defaults(handler=run_report)


def build_report(run_dir: str | Path) -> list[Path]:
    run_dir = Path(run_dir)
    frame = read_trace(run_dir / TRACE_FILE)
    resolved = run_dir / RESOLVED_CONFIG_FILE
    config = load_experiment_config(resolved) if resolved.exists() else ExperimentConfig()
    summary = read_summary(run_dir / SUMMARY_FILE) if (run_dir / SUMMARY_FILE).exists() else None

    paths = render_charts(frame, run_dir)
    markdown = run_dir / SUMMARY_MARKDOWN
    markdown.write_text(summary_markdown(frame, config.diagnostics.pearson_after_step, summary), encoding="utf-8")
    paths.append(markdown)
    logger.info("report: wrote %d files to %s", len(paths), run_dir)
    return paths


def run_report(args: argparse.Namespace) -> list[Path]:
    paths = build_report(args.run_dir)
    for path in paths:
        print(path)
    return paths
