"""
gic: gradient-independence report for the configured model at init and,
optionally, at a checkpoint; plus the Monte-Carlo containment run.
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np

from app.api import load_config, output_dir
from app.models.experiment import ExperimentConfig
from app.services.autodiff import jacobian_params
from app.services.errors import DomainError
from app.services.gicstat import edge_structural_bounds, gic_check, monte_carlo_containment, predicted_structural_bounds, z_factor
from app.services.network import load_theta
from app.services.trace_store import write_summary, write_table
from app.services.training import build_model, load_dataset, split_diagnostic

logger = logging.getLogger("gensmooth.api.gic")

GIC_FILE = "gic.csv"
GIC_SUMMARY_FILE = "gic.json"
GIC_COLUMNS = (
    "source",
    "sample",
    "n_columns",
    "dim",
    "epsilon",
    "fraction_norm_ok",
    "fraction_inner_ok",
    "max_abs_inner",
    "min_norm",
    "passes",
)


def register(subparsers) -> None:
    parser = subparsers.add_parser("gic", help="Gradient-independence check")
    parser.add_argument("--checkpoint", help="Also check θ from this checkpoint")
    parser.add_argument("--monte-carlo", action="store_true", help="Run the Monte-Carlo containment experiment")
    parser.set_defaults(handler=run_gic)


def _theory(theta_count: int, mf: int, epsilon: float) -> dict | None:
    try:
        u_max, d_max = predicted_structural_bounds(theta_count, mf, epsilon)
        u_edge, d_edge = edge_structural_bounds(theta_count, mf, epsilon)
    except DomainError:
        return None
    return {"z_factor": z_factor(theta_count, mf), "U_max": u_max, "D_max": d_max, "U_edge": u_edge, "D_edge": d_edge}


def gic_rows(config: ExperimentConfig, checkpoint: str | None = None) -> tuple[list[dict], dict]:
    data = load_dataset(config)
    _, held_out = split_diagnostic(config, data)
    model, theta0 = build_model(config, data)
    sources = [("init", theta0)]
    if checkpoint:
        sources.append(("checkpoint", load_theta(checkpoint, expected_count=model.parameter_count)))

    g = config.gic
    rows: list[dict] = []
    summary: dict = {"parameter_count": model.parameter_count, "output_dim": model.output_dim, "sources": {}}
    for name, theta in sources:
        passed = 0
        for index, x in enumerate(held_out.inputs):
            report = gic_check(
                jacobian_params(model, theta, x),
                g.epsilon,
                pass_constant=g.pass_constant,
                min_pass_fraction=g.min_pass_fraction,
            )
            passed += report.passes
            rows.append({"source": name, "sample": index, **report.as_dict()})
        epsilons = [r["epsilon"] for r in rows if r["source"] == name]
        summary["sources"][name] = {
            "samples": held_out.n,
            "pass_fraction": passed / held_out.n,
            "theory": _theory(model.parameter_count, model.output_dim, float(np.median(epsilons))),
        }
        logger.info("gic: %s passes on %d of %d samples", name, passed, held_out.n)
    return rows, summary


def run_gic(args: argparse.Namespace) -> Path:
    config = load_config(args)
    g = config.gic
    out_dir = output_dir(config, "gic")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, summary = gic_rows(config, args.checkpoint or g.checkpoint)
    write_table(out_dir / GIC_FILE, GIC_COLUMNS, rows)
    if args.monte_carlo or g.monte_carlo:
        report = monte_carlo_containment(g.mc_theta_count, g.mc_output_dim, g.epsilon or 1.0, g.mc_trials, config.seed)
        summary["monte_carlo"] = report.as_dict()
    write_summary(out_dir / GIC_SUMMARY_FILE, summary)
    print(out_dir / GIC_FILE)
    return out_dir / GIC_FILE
