"""Command-line entry points.

    shapstab run --config cfg.json [--out DIR] [--workers K]
    shapstab prepare --data data.csv --report schema.json [--matrix out.csv]
    shapstab verify --model model.json --data data.csv --row-index I

Exit codes: 0 success, 1 configuration or data error, 2 run failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import treeshap
from .dataset import CategoryEncoder, clean_education, load_dataset
from .errors import ExperimentError, ShapStabError
from .gbdt import TreeEnsemble, predict_margin
from .harness import ExperimentConfig, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapstab",
        description="Seed-stability audit of SHAP rankings for boosted PD models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full N-seed experiment")
    p_run.add_argument("--config", required=True, help="experiment config JSON")
    p_run.add_argument("--out", default=None,
                       help="output directory (overrides config output_dir)")
    p_run.add_argument("--workers", type=int, default=None,
                       help="parallel model runs (default: SHAPSTAB_WORKERS or 1)")

    p_prep = sub.add_parser("prepare",
                            help="encode the dataset and write the schema report")
    p_prep.add_argument("--data", required=True, help="raw CSV path")
    p_prep.add_argument("--report", required=True, help="schema report JSON path")
    p_prep.add_argument("--matrix", default=None,
                        help="optional CSV dump of the encoded matrix")

    p_ver = sub.add_parser("verify",
                           help="spot-check SHAP against the exhaustive oracle "
                                "(small models only)")
    p_ver.add_argument("--model", required=True, help="serialized model JSON")
    p_ver.add_argument("--data", required=True, help="raw CSV to encode")
    p_ver.add_argument("--row-index", type=int, required=True,
                       help="row of the encoded matrix to explain")
    p_ver.add_argument("--tolerance", type=float, default=1e-9)
    return parser


def _resolve_workers(value) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("SHAPSTAB_WORKERS", "")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ShapStabError(f"SHAPSTAB_WORKERS must be an integer, got {env!r}")
    return 1


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_json_file(args.config)
    if args.out:
        config = dataclasses.replace(config, output_dir=args.out)
    workers = _resolve_workers(args.workers)
    summary = run_experiment(config, workers=workers)
    report = summary.concordance_all
    print(f"models: {len(summary.per_model)}")
    ks = summary.aggregates["ks"]
    print(f"median KS: {ks.median:.4f}  [{ks.lower:.4f}, {ks.upper:.4f}]")
    print(f"Kendall's W: {report.w:.4f}  (chi2={report.chi_square:.1f}, "
          f"df={report.df}, p={report.p_value:.3g})")
    if config.output_dir:
        print(f"reports written to {config.output_dir}")
    return EXIT_OK


def _cmd_prepare(args) -> int:
    raw = clean_education(load_dataset(args.data))
    encoder = CategoryEncoder().fit(raw)
    matrix = encoder.transform(raw)
    report = encoder.schema_report(matrix)
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.matrix:
        matrix.to_csv(args.matrix)
    print(f"{matrix.n_rows} rows x {matrix.n_cols} columns; "
          f"report written to {args.report}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    model = TreeEnsemble.load(args.model)
    raw = clean_education(load_dataset(args.data))
    matrix = CategoryEncoder().fit(raw).transform(raw)
    if matrix.column_names != model.column_names:
        raise ShapStabError(
            "encoded columns do not match the model's column snapshot")
    if not 0 <= args.row_index < matrix.n_rows:
        raise ShapStabError(
            f"row index {args.row_index} outside 0..{matrix.n_rows - 1}")
    row = matrix.values[args.row_index]
    fast = treeshap.shap_values(model, row)
    slow = treeshap.brute_force_shap(model, row)
    margin = predict_margin(model, row)
    max_diff = float(np.max(np.abs(fast.phi - slow.phi))) if len(fast.phi) else 0.0
    max_diff = max(max_diff, abs(fast.base_value - slow.base_value))
    additivity = abs(fast.base_value + float(fast.phi.sum()) - margin)
    print(f"max |fast - oracle|: {max_diff:.3e}")
    print(f"additivity gap:      {additivity:.3e}")
    if max_diff > args.tolerance or additivity > 1e-6:
        print("verify: FAIL")
        return EXIT_RUN
    print("verify: PASS")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "prepare": _cmd_prepare, "verify": _cmd_verify}
    try:
        return handlers[args.command](args)
    except ExperimentError as exc:
        logger.error("run failed: %s", exc)
        return EXIT_RUN
    except (ShapStabError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
