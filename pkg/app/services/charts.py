"""
Static SVG charts and a markdown summary for a run directory.

Every chart is a 960×540 pt canvas with step on the x axis, one line per
series, legend in the upper right. Non-finite points are dropped from
their series. Output is byte-stable: fixed hash salt, no date metadata,
text kept as text.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from app.config import get_settings  # noqa: E402

logger = logging.getLogger("gensmooth.charts")

CANVAS_PT = (960, 540)

CHARTS = {
    "bounds.svg": (
        "Loss and its bounds",
        "natural log",
        ["log_loss", "log_lower_bound", "log_upper_bound"],
    ),
    "pearson.svg": (
        "Sliding Pearson correlation",
        "r",
        ["pearson_upper", "pearson_lower", "pearson_indicator_upper", "pearson_indicator_lower"],
    ),
    "indicators.svg": (
        "Output-gradient indicator and its brackets",
        "natural log",
        ["log_output_grad_sq", "log_indicator_lower", "log_indicator_upper"],
    ),
}


def _rc() -> dict:
    return {
        "svg.hashsalt": get_settings().svg_hashsalt,
        "svg.fonttype": "none",
        "font.family": "DejaVu Sans",
        "axes.grid": True,
    }


def line_chart(path: str | Path, frame: pd.DataFrame, columns: list[str], title: str, ylabel: str) -> Path:
    path = Path(path)
    with plt.rc_context(_rc()):
        fig, ax = plt.subplots(figsize=(CANVAS_PT[0] / 72, CANVAS_PT[1] / 72), dpi=72)
        drawn = 0
        for column in columns:
            if column not in frame.columns or frame.empty:
                continue
            steps = pd.to_numeric(frame["step"], errors="coerce").to_numpy(dtype=float)
            values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
            keep = np.isfinite(steps) & np.isfinite(values)
            if keep.any():
                ax.plot(steps[keep], values[keep], label=column, linewidth=1.2)
                drawn += 1
        if columns and columns[0].startswith("pearson"):
            ax.set_ylim(-1.05, 1.05)
        ax.set_title(title)
        ax.set_xlabel("step")
        ax.set_ylabel(ylabel)
        if drawn:
            ax.legend(loc="upper right")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def render_charts(frame: pd.DataFrame, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    return [line_chart(out_dir / name, frame, columns, title, ylabel) for name, (title, ylabel, columns) in CHARTS.items()]


def _median(frame: pd.DataFrame, column: str, after_step: int) -> float:
    if column not in frame.columns or frame.empty:
        return math.nan
    rows = frame[pd.to_numeric(frame["step"], errors="coerce") >= after_step]
    if "pearson_zero_variance" in rows.columns:
        rows = rows[rows["pearson_zero_variance"] != True]  # noqa: E712
    values = pd.to_numeric(rows[column], errors="coerce").dropna()
    return float(values.median()) if len(values) else math.nan


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def summary_markdown(frame: pd.DataFrame, after_step: int, summary: dict | None = None) -> str:
    lines = ["# Run report", ""]
    lines.append(f"- diagnostic rows: {len(frame)}")
    if not frame.empty:
        lines.append(f"- last step: {int(frame['step'].iloc[-1])}")
        lines.append(f"- final log loss: {_fmt(float(frame['log_loss'].iloc[-1]))}")
        if "degenerate" in frame.columns:
            lines.append(f"- degenerate rows: {int((frame['degenerate'] == True).sum())}")  # noqa: E712
    lines += ["", f"## Median Pearson correlation (steps >= {after_step})", "", "| pair | median r |", "|---|---|"]
    for column, value in median_pearson(frame, after_step).items():
        lines.append(f"| {column} | {_fmt(value)} |")
    if summary:
        sandwich = summary.get("sandwich", {})
        lines += ["", "## Training", ""]
        for key in ("loss", "model", "steps", "initial_loss", "final_loss", "train_accuracy", "max_measured_M"):
            if key in summary:
                lines.append(f"- {key}: {_fmt(summary[key])}")
        for key in ("rows", "lower_violations", "upper_violations", "indicator_violations"):
            if key in sandwich:
                lines.append(f"- sandwich {key}: {_fmt(sandwich[key])}")
    return "\n".join(lines) + "\n"


def median_pearson(frame: pd.DataFrame, after_step: int) -> dict[str, float]:
    return {column: _median(frame, column, after_step) for column in CHARTS["pearson.svg"][2]}
