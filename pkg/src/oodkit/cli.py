"""Command-line entry point: ``oodkit <command> --config experiment.json``.

Exit codes: 0 on success, 1 on configuration or data errors, 2 when an
evaluation grid contains a failed cell.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import Optional, Sequence

from .errors import OODKitError
from .experiment import (
    ExperimentConfig,
    cmd_bench,
    cmd_evaluate,
    cmd_explain,
    cmd_fit,
    cmd_score,
    cmd_synth,
    load_config,
)

EXIT_OK, EXIT_CONFIG, EXIT_CELL_FAILED = 0, 1, 2

COMMANDS = {
    "synth": "generate a synthetic dataset (CSV + schema, plus the shifted companion)",
    "fit": "fit the configured estimators and save them under <out>/models",
    "score": "score data with the saved models",
    "evaluate": "run the repeated-trial AUC grid and score distributions",
    "explain": "split-feature rank test and per-outlier SHAP explanations",
    "bench": "time single-sample inference and SHAP per estimator",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (JSON)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="base seed (overrides seed)")
    common.add_argument("--jobs", type=int, help="parallel grid workers (overrides jobs)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="oodkit", description="Tabular out-of-distribution detector evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "score":
            p.add_argument("--input", help="CSV to score (default: test split and OOD groups)")
    return parser


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    return dataclasses.replace(config, **changes) if changes else config


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _apply_overrides(load_config(args.config), args)
        code = EXIT_OK
        if args.command == "synth":
            result = cmd_synth(config)
        elif args.command == "fit":
            result = cmd_fit(config)
        elif args.command == "score":
            result = {"scores": cmd_score(config, args.input)}
        elif args.command == "evaluate":
            report, code = cmd_evaluate(config)
            result = {"report": f"{config.output_dir}/report.json", "failed_cells": code == EXIT_CELL_FAILED}
            for w in report["warnings"]:
                print(f"warning: {w['message']}", file=sys.stderr)
        elif args.command == "explain":
            cmd_explain(config)
            result = {"report": f"{config.output_dir}/report.json"}
        else:
            cmd_bench(config)
            result = {"timing": f"{config.output_dir}/timing.csv"}
    except (OODKitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(result, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
