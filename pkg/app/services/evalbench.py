"""
Imputation metrics and the seeded Monte-Carlo harness.

Every replicate ``r`` uses ``seed = base_seed + r``; independent streams for
data generation, contamination, masking and initialization are derived from
that seed with ``numpy.random.SeedSequence([seed, stream])``, so a replicate
can be re-run on its own and its randomness does not depend on grid order.
All grid points of a replicate share its dataset, and all methods of a run
share its mask.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.config.logger import app_logger, log_performance
from app.models.dataset import MaskedDataset
from app.models.experiment import ConditionAggregate, ExperimentGrid, ExperimentReport, MetricSet, RunRecord
from app.models.mixture import InitPlan
from app.models.synthetic import ContaminationSpec, MissingnessSpec
from app.services.dataset_io import read_dataset, write_json
from app.services.init_select import fit_with_init
from app.services.synthgen import build_masked, contaminate, inject_missing, scale_features_1_100
from app.utils.errors import DimensionMismatch, ImputationError, ValidationFailure, ZeroTruth

DatasetSource = Union[None, str, Path]

STREAM_DATA = 0
STREAM_OUTLIERS = 1
STREAM_MISSING = 2
STREAM_INIT = 3

ZERO_TRUTH = 1e-300

RUN_COLUMNS = [
    "condition",
    "replicate",
    "seed",
    "method",
    "missing_rate",
    "outlier_rate",
    "mape",
    "clean_mape",
    "mae",
    "rmse",
    "n_missing_cells",
    "n_clean_missing_cells",
    "iterations",
    "converged",
    "error",
]
AGGREGATE_METRICS = ["mape", "clean_mape", "mae", "rmse"]


def _pair(truth: Sequence[float], estimate: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    f = np.asarray(truth, dtype=np.float64).reshape(-1)
    g = np.asarray(estimate, dtype=np.float64).reshape(-1)
    if f.shape != g.shape or f.size == 0:
        raise DimensionMismatch("truth and estimate need equal nonzero lengths", detail=f"{f.size} vs {g.size}")
    return f, g


def mape(truth: Sequence[float], estimate: Sequence[float]) -> float:
    """100 / N * sum |f - f_hat| / |f|, in percent."""
    f, g = _pair(truth, estimate)
    if np.any(np.abs(f) < ZERO_TRUTH):
        raise ZeroTruth("MAPE is undefined for a zero truth value", detail=f"{int(np.sum(np.abs(f) < ZERO_TRUTH))} cells")
    return float(100.0 * np.mean(np.abs(f - g) / np.abs(f)))


def mae(truth: Sequence[float], estimate: Sequence[float]) -> float:
    f, g = _pair(truth, estimate)
    return float(np.mean(np.abs(f - g)))


def rmse(truth: Sequence[float], estimate: Sequence[float]) -> float:
    f, g = _pair(truth, estimate)
    return float(np.sqrt(np.mean((f - g) ** 2)))


def score_imputation(
    truth: np.ndarray,
    imputed: np.ndarray,
    mask: np.ndarray,
    outlier_flags: Optional[np.ndarray] = None,
) -> MetricSet:
    """Metrics over masked cells only; ``clean_mape`` skips rows flagged as outliers."""
    missing = ~np.asarray(mask, dtype=bool)
    if not missing.any():
        raise ValidationFailure("no masked cells to score")
    f, g = np.asarray(truth)[missing], np.asarray(imputed)[missing]
    clean_mape = None
    n_clean = 0
    if outlier_flags is not None:
        clean = missing & ~np.asarray(outlier_flags, dtype=bool)[:, None]
        n_clean = int(clean.sum())
        if n_clean:
            clean_mape = mape(np.asarray(truth)[clean], np.asarray(imputed)[clean])
    else:
        n_clean = int(missing.sum())
    value = mape(f, g)
    return MetricSet(
        mape=value,
        mae=mae(f, g),
        rmse=rmse(f, g),
        n_missing_cells=int(missing.sum()),
        clean_mape=value if outlier_flags is None else clean_mape,
        n_clean_missing_cells=n_clean,
    )


def derive_seed(seed: int, stream: int) -> int:
    """Counter-based sub-seed for one randomness stream of a replicate."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1, dtype=np.uint64)[0])


def _missing_spec(grid: ExperimentGrid, rate: float, seed: int) -> MissingnessSpec:
    if grid.missing_mode == "block":
        return MissingnessSpec(mechanism="block", image_rate=rate, row_rate=grid.block_row_rate, seed=seed)
    return MissingnessSpec(mechanism="mcar", rate=rate, seed=seed)


def _prepare(
    grid: ExperimentGrid,
    source_data: Optional[np.ndarray],
    replicate_seed: int,
    missing_rate: float,
    outlier_rate: float,
) -> Tuple[np.ndarray, np.ndarray, MaskedDataset]:
    contamination = ContaminationSpec(
        kind=grid.outlier_kind, rate=outlier_rate, seed=derive_seed(replicate_seed, STREAM_OUTLIERS)
    )
    missing = _missing_spec(grid, missing_rate, derive_seed(replicate_seed, STREAM_MISSING))
    if source_data is None:
        spec = grid.synthetic.model_copy(update={"seed": derive_seed(replicate_seed, STREAM_DATA)})
        truth, _, flags, masked = build_masked(spec, missing, contamination)
        return truth, flags, masked
    truth, flags = contaminate(source_data, contamination)
    return truth, flags, inject_missing(truth, missing)


def _run_job(
    grid: ExperimentGrid,
    source_data: Optional[np.ndarray],
    condition: int,
    missing_rate: float,
    outlier_rate: float,
    replicate: int,
) -> List[RunRecord]:
    seed = grid.base_seed + replicate
    common = dict(
        condition=condition, replicate=replicate, seed=seed, missing_rate=missing_rate, outlier_rate=outlier_rate
    )
    try:
        truth, flags, masked = _prepare(grid, source_data, seed, missing_rate, outlier_rate)
    except ImputationError as exc:
        app_logger.error(f"Run condition={condition} replicate={replicate} could not build data: {exc.message}")
        return [RunRecord(method=method, error=type(exc).__name__, **common) for method in grid.methods]

    init_seed = derive_seed(seed, STREAM_INIT)
    cfg = grid.fit.model_copy(update={"seed": init_seed})
    plan = InitPlan(seed=init_seed)
    records: List[RunRecord] = []
    for method in grid.methods:
        started = time.perf_counter()
        try:
            outcome = fit_with_init(method, masked, grid.k, cfg, plan)
            metrics = score_imputation(truth, outcome.imputed, masked.mask, flags if outlier_rate > 0 else None)
            elapsed = time.perf_counter() - started
            records.append(
                RunRecord(
                    method=method,
                    metrics=metrics,
                    iterations=outcome.report.iterations,
                    converged=outcome.report.converged,
                    wall_time_s=elapsed,
                    **common,
                )
            )
        except ImputationError as exc:
            elapsed = time.perf_counter() - started
            app_logger.error(
                f"Run condition={condition} replicate={replicate} method={method} failed: "
                f"{type(exc).__name__}: {exc.message}"
            )
            records.append(RunRecord(method=method, wall_time_s=elapsed, error=type(exc).__name__, **common))
        log_performance("bench.run", elapsed, condition=condition, replicate=replicate, method=method)
    return records


def _quartiles(values: List[float]) -> List[Optional[float]]:
    if not values:
        return [None, None, None]
    return [float(v) for v in np.percentile(np.asarray(values), [25, 50, 75])]


def aggregate_runs(runs: Sequence[RunRecord], methods: Sequence[str]) -> List[ConditionAggregate]:
    """Quartiles per (condition, method) over completed runs."""
    aggregates: List[ConditionAggregate] = []
    conditions = sorted({(r.condition, r.missing_rate, r.outlier_rate) for r in runs})
    for condition, missing_rate, outlier_rate in conditions:
        for method in methods:
            group = [r for r in runs if r.condition == condition and r.method == method]
            done = [r for r in group if r.ok]
            quartiles = {
                name: _quartiles([getattr(r.metrics, name) for r in done if getattr(r.metrics, name) is not None])
                for name in AGGREGATE_METRICS
            }
            aggregates.append(
                ConditionAggregate(
                    method=method,
                    missing_rate=missing_rate,
                    outlier_rate=outlier_rate,
                    n_runs=len(done),
                    n_failed=len(group) - len(done),
                    quartiles=quartiles,
                )
            )
    return aggregates


def load_source(path: Union[str, Path]) -> np.ndarray:
    """Fully observed rows of a CSV, each feature scaled onto [1, 100]."""
    dataset = read_dataset(path).dataset
    complete = dataset.mask.all(axis=1)
    if not complete.all():
        app_logger.warning(f"Dropping {int((~complete).sum())} incomplete rows of {path} from the benchmark source")
    values = dataset.values[complete]
    if values.shape[0] < 2:
        raise ValidationFailure(f"benchmark source {path} has fewer than two complete rows")
    return scale_features_1_100(values)


def run_experiment(grid: ExperimentGrid, source: DatasetSource = None) -> ExperimentReport:
    """Run every (grid point, replicate, method) and aggregate.

    ``source`` is a CSV path, or None for the synthetic spec of the grid.
    """
    started = time.perf_counter()
    source_data = load_source(source) if source is not None else None
    points = [
        (condition, missing_rate, outlier_rate)
        for condition, (missing_rate, outlier_rate) in enumerate(
            (mr, orate) for mr in grid.missing_rates for orate in grid.outlier_rates
        )
    ]
    jobs = [(c, mr, orate, r) for c, mr, orate in points for r in range(grid.mc_runs)]
    app_logger.info(
        f"Running {len(jobs)} jobs ({len(points)} conditions x {grid.mc_runs} replicates, "
        f"methods={list(grid.methods)}, parallelism={grid.parallelism})"
    )

    if grid.parallelism > 1:
        with ThreadPoolExecutor(max_workers=grid.parallelism) as executor:
            results = list(executor.map(lambda job: _run_job(grid, source_data, *job), jobs))
    else:
        results = [_run_job(grid, source_data, *job) for job in jobs]

    method_order = {method: i for i, method in enumerate(grid.methods)}
    runs = sorted(
        (record for batch in results for record in batch),
        key=lambda r: (r.condition, r.replicate, method_order[r.method]),
    )
    report = ExperimentReport(runs=runs, aggregates=aggregate_runs(runs, grid.methods))
    log_performance("bench.experiment", time.perf_counter() - started, jobs=len(jobs), failed=report.n_failed)
    return report


def runs_frame(report: ExperimentReport) -> pd.DataFrame:
    rows: List[Dict[str, object]] = []
    for run in report.runs:
        metrics = run.metrics
        rows.append(
            {
                "condition": run.condition,
                "replicate": run.replicate,
                "seed": run.seed,
                "method": run.method,
                "missing_rate": run.missing_rate,
                "outlier_rate": run.outlier_rate,
                "mape": metrics.mape if metrics else None,
                "clean_mape": metrics.clean_mape if metrics else None,
                "mae": metrics.mae if metrics else None,
                "rmse": metrics.rmse if metrics else None,
                "n_missing_cells": metrics.n_missing_cells if metrics else None,
                "n_clean_missing_cells": metrics.n_clean_missing_cells if metrics else None,
                "iterations": run.iterations,
                "converged": run.converged,
                "error": run.error or "",
            }
        )
    return pd.DataFrame(rows, columns=RUN_COLUMNS)


def aggregate_table(report: ExperimentReport) -> str:
    """Plain-text table of medians and quartiles for stdout."""
    rows = []
    for agg in report.aggregates:
        row: Dict[str, object] = {
            "method": agg.method,
            "missing": agg.missing_rate,
            "outliers": agg.outlier_rate,
            "runs": agg.n_runs,
            "failed": agg.n_failed,
        }
        for name in AGGREGATE_METRICS:
            q1, median, q3 = agg.quartiles[name]
            row[name] = "-" if median is None else f"{median:.4g} [{q1:.4g}, {q3:.4g}]"
        rows.append(row)
    return pd.DataFrame(rows).to_string(index=False)


def write_report(report: ExperimentReport, output_dir: Union[str, Path]) -> Dict[str, Path]:
    """runs.csv and aggregates.json (deterministic) plus timings.csv (wall clock)."""
    output_dir = Path(output_dir)
    paths = {
        "runs": output_dir / "runs.csv",
        "aggregates": output_dir / "aggregates.json",
        "timings": output_dir / "timings.csv",
    }
    frame = runs_frame(report)
    frame.to_csv(paths["runs"], index=False, lineterminator="\n", float_format="%.17g")
    write_json(paths["aggregates"], {"aggregates": [agg.model_dump() for agg in report.aggregates]})
    timings = pd.DataFrame(
        [
            {"condition": r.condition, "replicate": r.replicate, "method": r.method, "wall_time_s": r.wall_time_s}
            for r in report.runs
        ],
        columns=["condition", "replicate", "method", "wall_time_s"],
    )
    timings.to_csv(paths["timings"], index=False, lineterminator="\n")
    return paths
