"""
Command-line front end: ``femimpute synth | impute | bench``.

Numerical behaviour depends on flags only; environment variables can change
logging and nothing else. Exit codes: 0 success, 1 numerical or fit failure,
2 usage or validation failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, model_validator

from app.config.logger import app_logger, set_log_level
from app.config.settings import settings
from app.models.experiment import ExperimentGrid
from app.models.mixture import FitConfig, GaussianMixtureModel, InitPlan
from app.models.synthetic import ContaminationSpec, MissingnessSpec, SyntheticSpec
from app.services.dataset_io import (
    load_model,
    read_dataset,
    save_model,
    write_column,
    write_imputed,
    write_int_matrix,
    write_json,
    write_matrix,
)
from app.services.evalbench import (
    STREAM_DATA,
    STREAM_MISSING,
    STREAM_OUTLIERS,
    aggregate_table,
    derive_seed,
    run_experiment,
    write_report,
)
from app.services.fem import impute_with_model
from app.services.gmm_baseline import gmm_impute_with_model
from app.services.init_select import fit_with_init, select_k
from app.services.synthgen import build_masked
from app.utils.errors import ImputationError, ValidationFailure

OUTLIER_KINDS = {"uniform": "uniform_minmax", "gaussian": "gaussian_feature_noise"}

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class CliConfig(BaseModel):
    """Validated options shared by ``impute`` and ``bench``."""

    method: Literal["fem", "gmm"] = "fem"
    k: Union[int, Literal["auto"]] = 3
    k_range: Tuple[int, int] = (1, 6)
    seed: int = Field(default=0, ge=0, lt=2**63)
    fit: FitConfig = Field(default_factory=FitConfig)

    @model_validator(mode="after")
    def _check_k(self) -> "CliConfig":
        if self.k != "auto" and self.k < 1:
            raise ValueError("--k must be a positive integer or 'auto'")
        low, high = self.k_range
        if low < 1 or high < low:
            raise ValueError(f"--k-range must be a:b with 1 <= a <= b, got {low}:{high}")
        return self


def _k_value(text: str) -> Union[int, str]:
    if text == "auto":
        return text
    try:
        return int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got '{text}'") from exc


def _k_range(text: str) -> Tuple[int, int]:
    try:
        low, high = (int(part) for part in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a:b, got '{text}'") from exc
    return low, high


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from exc


def _name_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _existing_dir(path: Path) -> Path:
    if not path.is_dir():
        raise ValidationFailure(f"output directory does not exist: {path}")
    return path


def _fit_config(args: argparse.Namespace) -> FitConfig:
    return FitConfig(outer_tol=args.tol, max_outer_iters=args.max_iters, seed=args.seed)


def _feature_header(m: int) -> List[str]:
    return [f"x{j + 1}" for j in range(m)]


def cmd_synth(args: argparse.Namespace) -> int:
    """Write data.csv and labels.csv, plus masked data, mask and outlier flags when requested."""
    output = _existing_dir(Path(args.output))
    spec = SyntheticSpec(
        N=args.n, m=args.m, K=args.k, family=args.family, nu=args.nu, seed=derive_seed(args.seed, STREAM_DATA)
    )
    missing = None
    if args.missing > 0:
        missing = MissingnessSpec(
            mechanism=args.missing_mode,
            rate=args.missing if args.missing_mode == "mcar" else 0.0,
            image_rate=args.missing if args.missing_mode == "block" else 0.0,
            row_rate=args.block_row_rate,
            seed=derive_seed(args.seed, STREAM_MISSING),
        )
    contamination = None
    if args.outliers > 0:
        contamination = ContaminationSpec(
            kind=OUTLIER_KINDS[args.outlier_kind], rate=args.outliers, seed=derive_seed(args.seed, STREAM_OUTLIERS)
        )

    truth, labels, flags, masked = build_masked(spec, missing, contamination)
    header = _feature_header(spec.m)
    write_matrix(output / "data.csv", truth, header)
    write_column(output / "labels.csv", "label", labels)
    if missing is not None:
        write_matrix(output / "data_missing.csv", truth, header, mask=masked.mask)
        write_int_matrix(output / "mask.csv", masked.mask, header)
    if contamination is not None:
        write_column(output / "outliers.csv", "outlier", flags)
    app_logger.info(f"Wrote synthetic {spec.family} dataset N={spec.N}, m={spec.m}, K={spec.K} to {output}")
    return EXIT_OK


def cmd_impute(args: argparse.Namespace) -> int:
    """Fit (or load) a model, write the imputed CSV, the model JSON and a fit summary."""
    output = Path(args.output)
    _existing_dir(output.parent)
    config = CliConfig(method=args.method, k=args.k, k_range=args.k_range, seed=args.seed, fit=_fit_config(args))
    table = read_dataset(args.input)
    data = table.dataset
    summary: dict = {"n_samples": data.n_samples, "n_features": data.n_features, "n_missing_cells": data.n_missing}

    if args.load_model:
        method, model = load_model(args.load_model)
        if isinstance(model, GaussianMixtureModel):
            imputed, resp = gmm_impute_with_model(data, model, config.fit)
        else:
            imputed, resp = impute_with_model(data, model, config.fit)
        labels = resp.labels()
        summary.update({"method": method, "n_components": model.n_components, "loaded_model": str(args.load_model)})
    else:
        method = config.method
        plan = InitPlan(seed=config.seed, kmeans_restarts=args.restarts)
        if config.k == "auto":
            low, high = config.k_range
            selection = select_k(data, range(low, high + 1), method, config.fit, plan)
            outcome = selection.best_fit
            summary["bic_table"] = selection.table
        else:
            outcome = fit_with_init(method, data, config.k, config.fit, plan)
        model, imputed, labels = outcome.model, outcome.imputed, outcome.report.labels
        summary.update(outcome.report.summary())
        summary["n_components"] = model.n_components
        summary["k_mode"] = "auto" if config.k == "auto" else "fixed"

    write_imputed(output, table, imputed)
    model_path = Path(args.save_model) if args.save_model else None
    if model_path is None and not args.load_model:
        model_path = output.with_suffix(".model.json")
    if model_path is not None:
        save_model(model_path, model, method)
    write_json(Path(args.summary) if args.summary else output.with_suffix(".summary.json"), summary)
    if args.labels_out:
        write_column(args.labels_out, "label", labels)
    app_logger.info(f"Imputed {data.n_missing} cells with {method.upper()} (K={model.n_components}) into {output}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    """Run the Monte-Carlo grid, write runs.csv / aggregates.json and print the aggregate table."""
    if args.mc < 1:
        raise ValidationFailure(f"--mc must be at least 1, got {args.mc}")
    output = _existing_dir(Path(args.output))
    methods = _name_list(args.methods)
    unknown = [m for m in methods if m not in ("fem", "gmm")]
    if unknown or not methods:
        raise ValidationFailure(f"--methods must list fem and/or gmm, got '{args.methods}'")

    grid = ExperimentGrid(
        missing_rates=args.missing,
        outlier_rates=args.outliers,
        methods=methods,
        mc_runs=args.mc,
        base_seed=args.seed,
        k=args.k,
        missing_mode=args.missing_mode,
        outlier_kind=OUTLIER_KINDS[args.outlier_kind],
        block_row_rate=args.block_row_rate,
        synthetic=SyntheticSpec(N=args.n, m=args.m, K=args.k, family=args.family, nu=args.nu),
        fit=_fit_config(args),
        parallelism=args.parallel,
    )
    report = run_experiment(grid, args.input)
    write_report(report, output)
    print(aggregate_table(report))
    if report.runs and report.n_failed == len(report.runs):
        app_logger.error("Every benchmark run failed")
        return EXIT_FAILURE
    return EXIT_OK


def _add_fit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="Seed for every random stream")
    parser.add_argument("--tol", type=float, default=1e-5, help="Outer relative-change tolerance")
    parser.add_argument("--max-iters", type=int, default=200, help="Maximum outer iterations")


def _add_corruption_flags(parser: argparse.ArgumentParser, list_valued: bool) -> None:
    rate = _float_list if list_valued else float
    default_missing = [0.3] if list_valued else 0.0
    default_outliers = [0.0] if list_valued else 0.0
    parser.add_argument("--missing", type=rate, default=default_missing, help="Missing rate(s)")
    parser.add_argument("--missing-mode", choices=["mcar", "block"], default="mcar")
    parser.add_argument("--block-row-rate", type=float, default=0.5, help="Row fraction per affected group")
    parser.add_argument("--outliers", type=rate, default=default_outliers, help="Outlier row rate(s)")
    parser.add_argument("--outlier-kind", choices=sorted(OUTLIER_KINDS), default="uniform")


def _add_synthetic_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--family", choices=["gaussian", "student"], default="gaussian")
    parser.add_argument("--n", type=int, default=2000, help="Samples")
    parser.add_argument("--m", type=int, default=10, help="Features")
    parser.add_argument("--k", type=int, default=3, help="Components")
    parser.add_argument("--nu", type=float, default=5.0, help="Student degrees of freedom")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="femimpute", description=settings.APP_DESCRIPTION)
    parser.add_argument("--verbose", action="store_true", help="Debug logging on stderr")
    parser.add_argument("--quiet", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic mixture dataset")
    _add_synthetic_flags(synth)
    _add_corruption_flags(synth, list_valued=False)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--output", required=True, help="Existing output directory")
    synth.set_defaults(handler=cmd_synth)

    impute = sub.add_parser("impute", help="Impute missing cells of a CSV")
    impute.add_argument("--input", required=True)
    impute.add_argument("--output", required=True, help="Imputed CSV path")
    impute.add_argument("--method", choices=["fem", "gmm"], default="fem")
    impute.add_argument("--k", type=_k_value, default=3, help="Components, or 'auto' for BIC selection")
    impute.add_argument("--k-range", type=_k_range, default=(1, 6), help="Candidate K for --k auto, as a:b")
    impute.add_argument("--restarts", type=int, default=10, help="K-means restarts")
    impute.add_argument("--save-model", help="Model JSON path (default: <output>.model.json)")
    impute.add_argument("--load-model", help="Skip fitting and impute with this model JSON")
    impute.add_argument("--summary", help="Fit summary JSON path (default: <output>.summary.json)")
    impute.add_argument("--labels-out", help="Also write per-row component labels")
    _add_fit_flags(impute)
    impute.set_defaults(handler=cmd_impute)

    bench = sub.add_parser("bench", help="Monte-Carlo comparison of FEM and GMM")
    bench.add_argument("--input", help="CSV source (default: synthetic mixture)")
    bench.add_argument("--output", required=True, help="Existing output directory")
    bench.add_argument("--methods", default="fem,gmm")
    bench.add_argument("--mc", type=int, default=1, help="Monte-Carlo replicates")
    bench.add_argument("--parallel", type=int, default=settings.BENCH_PARALLELISM)
    _add_synthetic_flags(bench)
    _add_corruption_flags(bench, list_valued=True)
    _add_fit_flags(bench)
    bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.verbose:
        set_log_level("DEBUG")
    elif args.quiet:
        set_log_level("WARNING")

    try:
        return args.handler(args)
    except ImputationError as exc:
        detail = f" ({exc.detail})" if exc.detail else ""
        app_logger.error(f"{type(exc).__name__}: {exc.message}{detail}")
        return exc.exit_code
    except ValidationError as exc:
        app_logger.error(f"Invalid options: {exc}")
        return EXIT_USAGE
    except OSError as exc:
        app_logger.error(f"I/O error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
