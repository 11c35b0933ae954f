"""
depth-sweep: structural error at initialization across block counts.

One row per (k, skip variant, seed); no training.
"""
from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from app.api import load_config, output_dir
from app.models.experiment import ExperimentConfig
from app.services.diagnostics import dataset_structural
from app.services.network import InitScheme, build, init
from app.services.trace_store import write_table
from app.services.training import load_dataset, split_diagnostic

logger = logging.getLogger("gensmooth.api.depth_sweep")

DEPTH_SWEEP_FILE = "depth_sweep.csv"
DEPTH_SWEEP_COLUMNS = ("k", "skip", "seed", "U", "L", "D", "S", "lambda_min", "lambda_max")


def register(subparsers) -> None:
    parser = subparsers.add_parser("depth-sweep", help="Structural error at init versus depth")
    parser.add_argument("--k-list", help="Comma-separated block counts, overrides sweep.k_list")
    parser.add_argument("--seeds", type=int, help="Seeds per (k, variant), overrides sweep.seeds")
    parser.set_defaults(handler=run_depth_sweep)


def depth_sweep_rows(config: ExperimentConfig) -> list[dict]:
    data = load_dataset(config)
    _, held_out = split_diagnostic(config, data)
    base = config.model_config_for(data.input_dim, data.class_count)
    d = config.diagnostics
    rows = []
    for k in config.sweep.k_list:
        for skip in (False, True):
            model = build(replace(base, block_count=k, skip_connections=skip))
            for offset in range(config.sweep.seeds):
                seed = config.init_seed + offset
                theta = init(model, InitScheme(config.init.kind, seed))
                s = dataset_structural(model, theta, held_out.inputs, d.weights, d.eig_floor, d.log_base)
                rows.append(
                    {
                        "k": k,
                        "skip": skip,
                        "seed": seed,
                        "U": s.U,
                        "L": s.L,
                        "D": s.D,
                        "S": s.S,
                        "lambda_min": s.lambda_min,
                        "lambda_max": s.lambda_max,
                    }
                )
            medians = np.median([r["lambda_min"] for r in rows[-config.sweep.seeds :]])
            logger.info("depth_sweep: k=%d skip=%s median lambda_min=%.4g", k, skip, medians)
    return rows


def run_depth_sweep(args: argparse.Namespace) -> Path:
    overrides = {}
    if args.k_list:
        overrides["sweep.k_list"] = args.k_list
    if args.seeds is not None:
        overrides["sweep.seeds"] = str(args.seeds)
    config = load_config(args, **overrides)
    out_dir = output_dir(config, "depth_sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / DEPTH_SWEEP_FILE
    write_table(path, DEPTH_SWEEP_COLUMNS, depth_sweep_rows(config))
    print(path)
    return path
