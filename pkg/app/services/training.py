"""
Training runs with bound tracking.

A run trains the configured model with mini-batch SGD (momentum, or the
generalized-smoothness optimal step when `optimizer.adaptive_step` is on),
evaluates the structural diagnostics on a fixed held-out batch every
`diagnostics.stride` steps and streams one TraceRecord per evaluation.
(config, seed) determines every output byte.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from app.config import get_settings
from app.models.experiment import ExperimentConfig
from app.models.trace import PEARSON_PAIRS, TraceRecord
from app.services import datasets
from app.services.datasets import Dataset
from app.services.diagnostics import DiagnosticPass, diagnose
from app.services.errors import ConfigError
from app.services.gicstat import sliding_pearson
from app.services.losses import LossKind, LossSpec
from app.services.network import DropoutEvaluator, ModelConfig, ParamModel, build, init, predict, save_theta
from app.services.normpower import equivalence_constants
from app.services.optim import SgdState, batch_gradient, estimate_M, mean_loss, optimal_step, sgd_step
from app.services.seeding import derive_seed
from app.services.trace_store import RunDirectory, TraceWriter, write_summary

logger = logging.getLogger("gensmooth.training")

SANDWICH_SLACK = 1e-6
DROPOUT_STREAM = 1 << 20


@dataclass
class SandwichTally:
    """Violation counts over non-degenerate diagnostic rows."""

    rows: int = 0
    lower_violations: int = 0
    upper_violations: int = 0
    indicator_violations: int = 0

    def rate(self, count: int) -> float:
        return count / self.rows if self.rows else 0.0

    def as_dict(self) -> dict:
        return {
            "rows": self.rows,
            "lower_violations": self.lower_violations,
            "upper_violations": self.upper_violations,
            "indicator_violations": self.indicator_violations,
            "lower_violation_rate": self.rate(self.lower_violations),
            "upper_violation_rate": self.rate(self.upper_violations),
        }


@dataclass
class RunResult:
    run_dir: RunDirectory
    model: ParamModel
    theta: np.ndarray
    steps: int
    records: list[TraceRecord]
    summary: dict
    tally: SandwichTally = field(default_factory=SandwichTally)


# Data and model


def load_dataset(config: ExperimentConfig) -> Dataset:
    d = config.data
    if d.source == "idx":
        data = datasets.load_idx(d.images_path, d.labels_path, d.classes)
    else:
        data = datasets.synthetic(d.classes, d.per_class, d.dim, d.separation, config.data_seed)
    if d.subset_n is not None:
        data = datasets.subset(data, d.subset_n, config.data_seed)
    return data


def split_diagnostic(config: ExperimentConfig, data: Dataset) -> tuple[Dataset, Dataset]:
    holdout = config.diagnostics.batch_size
    if holdout >= data.n:
        raise ConfigError(
            f"diagnostic batch of {holdout} leaves no training data out of {data.n} samples", "diagnostics.batch_size"
        )
    return datasets.split(data, holdout, derive_seed(config.data_seed, 1))


def build_model(config: ExperimentConfig, data: Dataset, model_config: ModelConfig | None = None) -> tuple[ParamModel, np.ndarray]:
    model = build(model_config or config.model_config_for(data.input_dim, data.class_count))
    return model, init(model, config.init_scheme())


def total_steps(config: ExperimentConfig, n: int) -> int:
    o = config.optimizer
    if o.epochs is None:
        return o.steps
    return o.epochs * math.ceil(n / min(o.batch_size, n))


def batch_indices(n: int, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    """Uniform batches without replacement, reshuffled each epoch from (seed, epoch)."""
    batch_size = min(batch_size, n)
    epoch = 0
    while True:
        order = np.random.default_rng(derive_seed(seed, epoch)).permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]
        epoch += 1


def accuracy(model: ParamModel, theta, data: Dataset) -> float:
    outputs = predict(model, theta, data.inputs)
    return float(np.mean(np.argmax(outputs, axis=1) == data.labels))


# Trace rows


def _log(value: float, floor: float) -> float:
    if math.isinf(value) and value > 0:
        return math.inf
    return math.log(max(value, floor))


def _window_pearson(history: dict[str, list[float]], window: int) -> dict:
    row: dict = {}
    flagged = False
    for column, (series, bracket) in PEARSON_PAIRS.items():
        xs = np.asarray(history[series][-window:])
        ys = np.asarray(history[bracket][-window:])
        if len(xs) < window or not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            row[column] = None
            continue
        result = sliding_pearson(xs, ys, window)
        row[column] = float(result.values[0])
        flagged |= bool(result.zero_variance[0])
    computed = any(row[c] is not None for c in PEARSON_PAIRS)
    row["pearson_zero_variance"] = flagged if computed else None
    return row


def _within(value: float, low: float, high: float) -> tuple[bool, bool]:
    slack = SANDWICH_SLACK * max(1.0, abs(value))
    return value >= low - slack, value <= high + slack


def trace_record(
    step: int,
    train_loss: float,
    result: DiagnosticPass,
    history: dict[str, list[float]],
    window: int,
    measured_M: float | None,
    floor: float,
) -> TraceRecord:
    structure = result.structure
    reports = result.reports
    output_sq = float(np.mean([r.output_grad_sq for r in reports]))
    param_sq = float(np.mean([r.param_grad_sq for r in reports]))
    lam_floor = max(structure.lambda_min, floor)
    log_param = _log(param_sq, floor)
    values = {
        "log_loss": _log(result.mean_loss_gap, floor),
        "log_lower_bound": _log(result.lower, floor),
        "log_upper_bound": _log(result.upper, floor),
        "log_output_grad_sq": _log(output_sq, floor),
        "log_indicator_lower": log_param - math.log(max(structure.lambda_max, floor)),
        "log_indicator_upper": math.inf if structure.degenerate else log_param - math.log(lam_floor),
    }
    for key, value in values.items():
        history[key].append(value)
    return TraceRecord(
        step=step,
        train_loss=train_loss,
        log_loss=values["log_loss"],
        U=structure.U,
        L=structure.L,
        D=structure.D,
        S=structure.S,
        log_local_grad_norm=_log(result.local_grad_norm, floor),
        log_global_grad_norm=_log(result.global_grad_norm, floor),
        log_lower_bound=values["log_lower_bound"],
        log_upper_bound=values["log_upper_bound"],
        log_output_grad_sq=values["log_output_grad_sq"],
        log_indicator_lower=values["log_indicator_lower"],
        log_indicator_upper=values["log_indicator_upper"],
        degenerate=structure.degenerate,
        q_min=result.q_min,
        measured_M=measured_M,
        **_window_pearson(history, window),
    )


def _tally(tally: SandwichTally, spec: LossSpec, record: TraceRecord, result: DiagnosticPass, step: int) -> None:
    if record.degenerate:
        return
    tally.rows += 1
    gap = result.mean_loss_gap
    lower_ok, upper_ok = _within(gap, result.lower, result.upper)
    low_ind, high_ind = _within(record.log_output_grad_sq, record.log_indicator_lower, record.log_indicator_upper)
    tally.lower_violations += not lower_ok
    tally.upper_violations += not upper_ok
    tally.indicator_violations += not (low_ind and high_ind)

    exact_lower = spec.has_exact_profile
    exact_upper = spec.kind in {LossKind.MSE} or (spec.kind is LossKind.PNORM_POW and spec.k == 2)
    if (exact_lower and not lower_ok) or (exact_upper and not upper_ok) or not (low_ind and high_ind):
        logger.warning(
            "training: sandwich violated at step %d: %.6g <= %.6g <= %.6g (indicator ok=%s)",
            step,
            result.lower,
            gap,
            result.upper,
            low_ind and high_ind,
        )


def _median_column(records: list[TraceRecord], column: str, after_step: int) -> float:
    values = [
        getattr(r, column)
        for r in records
        if r.step >= after_step and getattr(r, column) is not None and not r.pearson_zero_variance
    ]
    return float(np.median(values)) if values else math.nan


# Run


def train(
    config: ExperimentConfig,
    out_dir: str | Path,
    loss_label: str | None = None,
    model_config: ModelConfig | None = None,
) -> RunResult:
    settings = get_settings()
    floor = settings.log_floor
    run_dir = RunDirectory.create(out_dir)
    run_dir.resolved_config.write_text(config.to_flat(), encoding="utf-8")

    spec = config.loss_spec(loss_label)
    data = load_dataset(config)
    train_set, diag_set = split_diagnostic(config, data)
    model, theta = build_model(config, data, model_config)
    opt = config.optimizer
    diag = config.diagnostics
    steps = total_steps(config, train_set.n)
    adaptive = opt.adaptive_step
    omega = config.omega_spec()
    state = SgdState.start(theta, opt.lr, 0.0 if adaptive else opt.momentum)
    batches = batch_indices(train_set.n, opt.batch_size, derive_seed(config.seed, 2))
    rate = model.config.dropout_rate if model.config is not None else 0.0
    logger.info(
        "training: %s loss=%s steps=%d n=%d batch=%d adaptive=%s",
        model.describe(),
        spec.label,
        steps,
        train_set.n,
        min(opt.batch_size, train_set.n),
        adaptive,
    )

    records: list[TraceRecord] = []
    history: dict[str, list[float]] = {key: [] for pair in PEARSON_PAIRS.values() for key in pair}
    tally = SandwichTally()
    pending_M: float | None = None
    max_M = -math.inf
    checkpoints: list[str] = []
    initial_loss = mean_loss(spec, model, state.theta, train_set.inputs, train_set.targets)
    running_min_grad = math.inf
    kwargs = {"weights": diag.weights, "floor": diag.eig_floor, "log_base": diag.log_base}

    def record_event(step: int) -> None:
        nonlocal pending_M, running_min_grad
        result = diagnose(spec, model, state.theta, diag_set.inputs, diag_set.targets, **kwargs)
        train_loss = mean_loss(spec, model, state.theta, train_set.inputs, train_set.targets)
        record = trace_record(step, train_loss, result, history, diag.pearson_window, pending_M, floor)
        pending_M = None
        _tally(tally, spec, record, result, step)
        running_min_grad = min(running_min_grad, float(np.mean([r.param_grad_sq for r in result.reports])))
        writer.append(record)
        records.append(record)
        logger.debug("training: step %d loss=%.6g U=%.4g L=%.4g", step, train_loss, record.U, record.L)

    with TraceWriter(run_dir.trace) as writer:
        for step in range(steps):
            if step % diag.stride == 0:
                record_event(step)
            batch = next(batches)
            xs, ys = train_set.inputs[batch], train_set.targets[batch]
            dropout = (
                DropoutEvaluator(model, state.theta, rate, derive_seed(config.seed, DROPOUT_STREAM, step))
                if rate > 0
                else None
            )
            _, grad = batch_gradient(spec, model, state.theta, xs, ys, dropout)
            before = state.theta
            if adaptive:
                alpha, predicted = optimal_step(omega, grad)
                state = sgd_step(state, grad, lr=alpha) if alpha > 0 else sgd_step(state, np.zeros_like(grad))
                logger.debug("training: step %d alpha=%.6g predicted decrease=%.6g", step, alpha, predicted)
            else:
                state = sgd_step(state, grad)
            if opt.m_stride and step % opt.m_stride == 0:
                measured = estimate_M(spec, model, before, state.theta, (train_set.inputs, train_set.targets), batch)
                pending_M = measured
                max_M = max(max_M, measured)
            if opt.checkpoint_stride and (step + 1) % opt.checkpoint_stride == 0 and step + 1 < steps:
                path = run_dir.checkpoint(step + 1)
                save_theta(path, state.theta)
                checkpoints.append(path.name)
        if steps > 0:
            record_event(steps)

    final_path = run_dir.checkpoint(steps)
    save_theta(final_path, state.theta)
    checkpoints.append(final_path.name)
    final_loss = mean_loss(spec, model, state.theta, train_set.inputs, train_set.targets)

    convergence = _convergence_check(config, omega, train_set.n, min(opt.batch_size, train_set.n), max_M, running_min_grad, model)
    summary = {
        "loss": spec.label,
        "model": model.describe(),
        "parameter_count": model.parameter_count,
        "steps": steps,
        "diagnostic_events": len(records),
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "train_accuracy": accuracy(model, state.theta, train_set),
        "max_measured_M": max_M if math.isfinite(max_M) else None,
        "sandwich": tally.as_dict(),
        "median_pearson_upper": _median_column(records, "pearson_upper", diag.pearson_after_step),
        "median_pearson_lower": _median_column(records, "pearson_lower", diag.pearson_after_step),
        "median_pearson_indicator_upper": _median_column(records, "pearson_indicator_upper", diag.pearson_after_step),
        "median_pearson_indicator_lower": _median_column(records, "pearson_indicator_lower", diag.pearson_after_step),
        "convergence_check": convergence,
        "checkpoints": checkpoints,
        "seed": config.seed,
    }
    write_summary(run_dir.summary, summary)
    logger.info(
        "training: done, loss %.6g -> %.6g, sandwich violations lower=%d upper=%d",
        initial_loss,
        final_loss,
        tally.lower_violations,
        tally.upper_violations,
    )
    return RunResult(run_dir, model, state.theta, steps, records, summary, tally)


def _convergence_check(config, omega, n: int, m: int, max_M: float, running_min_grad: float, model: ParamModel) -> dict:
    """Compare the best observed E‖∇_θℓ‖₂² against γ·(ε^{r*} + (n−m)/m·M̂ + c_Ω)."""
    lo, _ = equivalence_constants(omega.power, model.parameter_count)
    gamma = lo**-2
    M_hat = max(max_M, 0.0) if math.isfinite(max_M) else 0.0
    r_star = omega.power.conjugate_order
    level = gamma * (config.optimizer.epsilon**r_star + (n - m) / m * M_hat + omega.relaxation)
    ok = running_min_grad <= level
    logger.info(
        "training: convergence check %s, min E|grad|^2=%.6g level=%.6g gamma=%.6g",
        "passed" if ok else "not met",
        running_min_grad,
        level,
        gamma,
    )
    return {"gamma": gamma, "level": level, "min_local_grad_sq": running_min_grad, "passed": ok}
