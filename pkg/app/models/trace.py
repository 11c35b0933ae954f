"""
Trace row schema: one row per diagnostic event.

Column order is fixed; `TRACE_COLUMNS` is the header of trace.csv.
Pearson columns hold the correlation of the window ending at this row and
stay empty until `diagnostics.pearson_window` events exist. `measured_M` is
empty on rows where no M measurement happened since the previous event.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass
class TraceRecord:
    step: int
    train_loss: float
    log_loss: float
    U: float
    L: float
    D: float
    S: float
    log_local_grad_norm: float
    log_global_grad_norm: float
    log_lower_bound: float
    log_upper_bound: float
    log_output_grad_sq: float
    log_indicator_lower: float
    log_indicator_upper: float
    degenerate: bool
    q_min: float | None = None
    pearson_upper: float | None = None
    pearson_lower: float | None = None
    pearson_indicator_upper: float | None = None
    pearson_indicator_lower: float | None = None
    pearson_zero_variance: bool | None = None
    measured_M: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


TRACE_COLUMNS: tuple[str, ...] = tuple(f.name for f in fields(TraceRecord))

# column -> (series, bracket) the sliding correlation runs over
PEARSON_PAIRS = {
    "pearson_upper": ("log_loss", "log_upper_bound"),
    "pearson_lower": ("log_loss", "log_lower_bound"),
    "pearson_indicator_upper": ("log_output_grad_sq", "log_indicator_upper"),
    "pearson_indicator_lower": ("log_output_grad_sq", "log_indicator_lower"),
}
