"""
File-backed run outputs.

A run directory holds:
    trace.csv            one TraceRecord per diagnostic event
    summary.json         final metrics and violation counts
    config.resolved      the validated config in flat key-value form
    checkpoints/         theta_<step>.bin
CSV dialect: comma separated, shortest round-trip floats, inf/-inf literals,
empty cells for missing values, LF line endings.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from app.models.trace import TRACE_COLUMNS, TraceRecord
from app.services.errors import DataFormatError

logger = logging.getLogger("gensmooth.trace_store")

TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
RESOLVED_CONFIG_FILE = "config.resolved"
CHECKPOINT_DIR = "checkpoints"


@dataclass(frozen=True)
class RunDirectory:
    root: Path

    @classmethod
    def create(cls, root: str | Path) -> "RunDirectory":
        root = Path(root)
        (root / CHECKPOINT_DIR).mkdir(parents=True, exist_ok=True)
        return cls(root)

    @property
    def trace(self) -> Path:
        return self.root / TRACE_FILE

    @property
    def summary(self) -> Path:
        return self.root / SUMMARY_FILE

    @property
    def resolved_config(self) -> Path:
        return self.root / RESOLVED_CONFIG_FILE

    def checkpoint(self, step: int) -> Path:
        return self.root / CHECKPOINT_DIR / f"theta_{step}.bin"


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def format_row(values) -> str:
    return ",".join(format_cell(v) for v in values) + "\n"


class TraceWriter:
    """Appends rows to trace.csv; the header is written on open."""

    def __init__(self, path: str | Path, columns: tuple[str, ...] = TRACE_COLUMNS):
        self.path = Path(path)
        self.columns = columns
        self._fh = self.path.open("w", encoding="utf-8", newline="\n")
        self._fh.write(",".join(columns) + "\n")
        self.rows = 0

    def append(self, record: TraceRecord | dict) -> None:
        data = record.as_dict() if isinstance(record, TraceRecord) else record
        self._fh.write(format_row(data.get(c) for c in self.columns))
        self.rows += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_table(path: str | Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    """Write a CSV in the trace dialect (used by analyze and the sweeps)."""
    with TraceWriter(path, columns) as writer:
        for row in rows:
            writer.append(row)


def read_trace(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataFormatError("trace file not found", path=str(path))
    try:
        frame = pd.read_csv(path, true_values=["true"], false_values=["false"])
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"corrupt trace: {exc}", path=str(path)) from None
    missing = [c for c in ("step", "log_loss", "log_lower_bound", "log_upper_bound") if c not in frame.columns]
    if missing:
        raise DataFormatError(f"trace is missing columns {missing}", byte_offset=0, path=str(path))
    return frame


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_summary(path: str | Path, summary: dict) -> None:
    Path(path).write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_summary(path: str | Path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataFormatError("summary file not found", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"corrupt summary: {exc.msg}", byte_offset=exc.pos, path=str(path)) from None
