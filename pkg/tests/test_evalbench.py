"""
Tests for imputation metrics and the Monte-Carlo harness.

Covers:
- MAPE / MAE / RMSE examples and loop oracles
- Scoring restricted to masked cells
- Quartile aggregation
- Seeded, reproducible experiment runs and report files
"""

import json

import numpy as np
import pytest

from app.models.experiment import ExperimentGrid, MetricSet, RunRecord
from app.models.mixture import FitConfig
from app.models.synthetic import SyntheticSpec
from app.services import evalbench
from app.services.evalbench import (
    RUN_COLUMNS,
    aggregate_runs,
    derive_seed,
    mae,
    mape,
    rmse,
    run_experiment,
    runs_frame,
    score_imputation,
    write_report,
)
from app.utils.errors import DimensionMismatch, FitDiverged, ZeroTruth


def _small_grid(**overrides):
    params = dict(
        missing_rates=[0.2],
        outlier_rates=[0.0],
        methods=["fem", "gmm"],
        mc_runs=2,
        base_seed=11,
        k=2,
        synthetic=SyntheticSpec(N=150, m=5, K=2),
        fit=FitConfig(max_outer_iters=30),
    )
    params.update(overrides)
    return ExperimentGrid(**params)


class TestMetrics:
    """Test the three error metrics."""

    def test_examples(self):
        """Hand-computed values."""
        assert mape([100.0], [110.0]) == pytest.approx(10.0)
        assert mape([2.0, 4.0], [1.0, 5.0]) == pytest.approx(37.5)
        assert mae([1.0, 2.0, 3.0], [2.0, 2.0, 5.0]) == pytest.approx(1.0)
        assert rmse([1.0, 2.0, 3.0], [2.0, 2.0, 5.0]) == pytest.approx(np.sqrt(5.0 / 3.0))

    def test_against_loops(self):
        """Vectorized metrics equal explicit loops."""
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 30))
            f = rng.uniform(1.0, 100.0, n)
            g = f + rng.standard_normal(n)
            assert mape(f, g) == pytest.approx(100.0 / n * sum(abs(a - b) / abs(a) for a, b in zip(f, g)), rel=1e-12)
            assert mae(f, g) == pytest.approx(sum(abs(a - b) for a, b in zip(f, g)) / n, rel=1e-12)
            assert rmse(f, g) == pytest.approx(np.sqrt(sum((a - b) ** 2 for a, b in zip(f, g)) / n), rel=1e-12)
            assert mae(f, g) <= rmse(f, g) * (1 + 1e-12)

    def test_zero_truth(self):
        """MAPE rejects a zero truth value."""
        with pytest.raises(ZeroTruth):
            mape([0.0, 1.0], [1.0, 1.0])

    def test_length_mismatch(self):
        """Vectors of different lengths are rejected."""
        with pytest.raises(DimensionMismatch):
            mae([1.0, 2.0], [1.0])

    def test_perfect_imputation(self):
        """Identical vectors score zero."""
        assert mape([5.0, 7.0], [5.0, 7.0]) == 0.0
        assert rmse([5.0, 7.0], [5.0, 7.0]) == 0.0


class TestScoreImputation:
    """Test scoring over masked cells."""

    def test_only_masked_cells(self):
        """Observed cells do not affect the score."""
        truth = np.array([[10.0, 20.0], [30.0, 40.0]])
        mask = np.array([[True, False], [True, True]])
        imputed = truth.copy()
        imputed[0, 1] = 22.0
        imputed[1, 0] = 999.0
        metrics = score_imputation(truth, imputed, mask)
        assert metrics.n_missing_cells == 1
        assert metrics.mape == pytest.approx(10.0)
        assert metrics.mae == pytest.approx(2.0)
        assert metrics.clean_mape == metrics.mape

    def test_clean_mape_skips_outlier_rows(self):
        """clean_mape ignores rows flagged as outliers."""
        truth = np.array([[10.0, 10.0, 10.0], [10.0, 10.0, 10.0]])
        mask = np.array([[True, False, True], [False, True, True]])
        imputed = np.array([[10.0, 11.0, 10.0], [15.0, 10.0, 10.0]])
        metrics = score_imputation(truth, imputed, mask, outlier_flags=np.array([False, True]))
        assert metrics.mape == pytest.approx(30.0)
        assert metrics.clean_mape == pytest.approx(10.0)
        assert metrics.n_clean_missing_cells == 1

    def test_metric_set_bound(self):
        """MetricSet rejects MAE above RMSE."""
        with pytest.raises(ValueError):
            MetricSet(mape=1.0, mae=2.0, rmse=1.0, n_missing_cells=1)


def _record(condition, replicate, method, value):
    metrics = MetricSet(mape=value, mae=value, rmse=value, n_missing_cells=1, clean_mape=value)
    return RunRecord(
        condition=condition, replicate=replicate, seed=replicate, method=method,
        missing_rate=0.1, outlier_rate=0.0, metrics=metrics,
    )


class TestAggregation:
    """Test quartile aggregation."""

    def test_linear_quartiles(self):
        """Quartiles use linear interpolation."""
        runs = [_record(0, r, "fem", v) for r, v in enumerate([1.0, 2.0, 3.0, 4.0])]
        (agg,) = aggregate_runs(runs, ["fem"])
        assert agg.quartiles["mape"] == pytest.approx([1.75, 2.5, 3.25])
        assert agg.n_runs == 4 and agg.n_failed == 0

    def test_single_run(self):
        """One run: all quartiles equal its value."""
        (agg,) = aggregate_runs([_record(0, 0, "gmm", 7.0)], ["gmm"])
        assert agg.quartiles["rmse"] == [7.0, 7.0, 7.0]

    def test_failed_runs_counted(self):
        """Failed runs are excluded from quartiles and counted."""
        failed = RunRecord(
            condition=0, replicate=1, seed=1, method="fem", missing_rate=0.1, outlier_rate=0.0, error="FitDiverged"
        )
        (agg,) = aggregate_runs([_record(0, 0, "fem", 3.0), failed], ["fem"])
        assert agg.n_runs == 1 and agg.n_failed == 1
        assert agg.quartiles["mae"] == [3.0, 3.0, 3.0]


class TestSeeds:
    """Test replicate seed derivation."""

    def test_streams_differ(self):
        """Each stream of a replicate gets its own seed."""
        seeds = {derive_seed(5, stream) for stream in range(4)}
        assert len(seeds) == 4

    def test_stable(self):
        """Derivation is a pure function of (seed, stream)."""
        assert derive_seed(42, 2) == derive_seed(42, 2)


class TestRunExperiment:
    """Test the Monte-Carlo harness end to end on a small grid."""

    def test_records_and_aggregates(self):
        """One record per (replicate, method), one aggregate per method."""
        report = run_experiment(_small_grid())
        assert len(report.runs) == 4
        assert [r.method for r in report.runs] == ["fem", "gmm", "fem", "gmm"]
        assert [r.seed for r in report.runs] == [11, 11, 12, 12]
        assert len(report.aggregates) == 2
        assert report.n_failed == 0
        for run in report.runs:
            assert run.metrics.mae <= run.metrics.rmse * (1 + 1e-12)

    def test_deterministic(self):
        """Two runs of the same grid give identical records."""
        first = runs_frame(run_experiment(_small_grid(mc_runs=1)))
        second = runs_frame(run_experiment(_small_grid(mc_runs=1)))
        assert list(first.columns) == RUN_COLUMNS
        assert first.equals(second)

    def test_methods_share_mask(self):
        """Both methods score the same number of masked cells."""
        report = run_experiment(_small_grid(mc_runs=1))
        fem_run, gmm_run = report.runs
        assert fem_run.metrics.n_missing_cells == gmm_run.metrics.n_missing_cells

    def test_parallel_matches_serial(self):
        """Thread parallelism does not change the records."""
        serial = runs_frame(run_experiment(_small_grid()))
        parallel = runs_frame(run_experiment(_small_grid(parallelism=2)))
        assert serial.equals(parallel)

    def test_failures_are_tagged(self, monkeypatch):
        """A failing fit is recorded with its error class and counted."""

        def broken(*args, **kwargs):
            raise FitDiverged(2, "forced")

        monkeypatch.setattr(evalbench, "fit_with_init", broken)
        report = run_experiment(_small_grid(mc_runs=1, methods=["fem"]))
        (run,) = report.runs
        assert run.error == "FitDiverged"
        assert report.n_failed == 1
        assert report.aggregates[0].quartiles["mape"] == [None, None, None]

    def test_write_report_reproducible(self, tmp_path):
        """runs.csv and aggregates.json are byte-identical across runs."""
        first_dir, second_dir = tmp_path / "a", tmp_path / "b"
        first_dir.mkdir()
        second_dir.mkdir()
        paths = write_report(run_experiment(_small_grid(mc_runs=1)), first_dir)
        write_report(run_experiment(_small_grid(mc_runs=1)), second_dir)
        for name in ("runs.csv", "aggregates.json"):
            assert (first_dir / name).read_bytes() == (second_dir / name).read_bytes()
        assert paths["timings"].exists()
        header = (first_dir / "runs.csv").read_text().splitlines()[0]
        assert header.split(",") == RUN_COLUMNS
        payload = json.loads((first_dir / "aggregates.json").read_text())
        assert {agg["method"] for agg in payload["aggregates"]} == {"fem", "gmm"}

    def test_csv_source(self, tmp_path):
        """A CSV source is scaled per feature and benchmarked."""
        rng = np.random.default_rng(3)
        values = np.vstack([rng.standard_normal((60, 4)), rng.standard_normal((60, 4)) + 5.0])
        source = tmp_path / "source.csv"
        source.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in values) + "\n")
        report = run_experiment(_small_grid(mc_runs=1, methods=["gmm"]), source)
        (run,) = report.runs
        assert run.ok
