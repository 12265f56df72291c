"""
Monte-Carlo acceptance runs.

These take minutes; deselect with ``pytest -m "not slow"``.
"""

import numpy as np
import pytest
from scipy import stats

from app.models.dataset import MaskedDataset
from app.models.experiment import ExperimentGrid
from app.models.mixture import FitConfig, MixtureModel
from app.models.synthetic import SyntheticSpec
from app.services.evalbench import run_experiment
from app.services.fem import conditional_moments, conditional_student_params
from app.services.init_select import select_k
from app.services.linalg import normalize_trace, partition_row

pytestmark = pytest.mark.slow


def _random_spd(rng, m):
    a = rng.standard_normal((m, m))
    return normalize_trace(a.T @ a + np.eye(m))


class TestConditionalSampling:
    """Conditional covariance against draws from the conditional Student law."""

    def test_cond_cov_matches_draws(self):
        """Empirical covariance of 10^6 draws within five Monte-Carlo standard errors, over 20 cases.

        Every entry of every case is checked, up to nine per case, so with around a
        hundred entries a three-error bound fails by chance in roughly one run
        of four. With d_obs in 6..8 the sample standard error of a product of t
        coordinates is itself heavy-tailed, which widens the band further.
        """
        rng = np.random.default_rng(2024)
        n_draws = 1_000_000
        for _ in range(20):
            d_obs = int(rng.integers(6, 9))
            d_mis = int(rng.integers(1, 4))
            m = d_obs + d_mis
            observed = np.ones(m, dtype=bool)
            observed[rng.choice(m, size=d_mis, replace=False)] = False
            part = partition_row(observed)
            mu = rng.standard_normal(m)
            sigma = _random_spd(rng, m)
            row = rng.standard_normal(m)
            model = MixtureModel(weights=[1.0], means=mu[None, :], scatters=sigma[None])

            moments = conditional_moments(row, part, 0, model)
            nu, loc, scale = conditional_student_params(row[part.observed_index], part, mu, sigma)
            assert nu == d_obs
            np.testing.assert_allclose(moments.cond_mean, loc, rtol=1e-12, atol=1e-12)

            draws = stats.multivariate_t(loc=loc, shape=scale, df=nu, seed=rng).rvs(size=n_draws)
            draws = draws.reshape(n_draws, d_mis)
            centred = draws - loc
            for a in range(d_mis):
                for b in range(d_mis):
                    products = centred[:, a] * centred[:, b]
                    se = products.std() / np.sqrt(n_draws)
                    assert abs(products.mean() - moments.cond_cov[a, b]) < 5.0 * se


def _ordering_grid(family, outlier_rates, missing_rate):
    return ExperimentGrid(
        missing_rates=[missing_rate],
        outlier_rates=outlier_rates,
        methods=["fem", "gmm"],
        mc_runs=10,
        base_seed=100,
        k=3,
        synthetic=SyntheticSpec(N=2000, m=10, K=3, family=family),
        fit=FitConfig(max_outer_iters=100),
    )


def _median(report, method, outlier_rate, metric):
    (agg,) = [a for a in report.aggregates if a.method == method and a.outlier_rate == outlier_rate]
    return agg.quartiles[metric][1]


class TestSyntheticOrderings:
    """FEM against the Gaussian baseline on synthetic mixtures."""

    def test_gaussian_data(self):
        """On Gaussian data FEM's median MAPE is within 10 percent of the baseline's."""
        report = run_experiment(_ordering_grid("gaussian", [0.0], 0.5))
        assert report.n_failed == 0
        assert _median(report, "fem", 0.0, "mape") <= 1.1 * _median(report, "gmm", 0.0, "mape")

    def test_student_data_with_outliers(self):
        """On contaminated Student data FEM wins at least 8 of 10 paired runs on clean rows."""
        report = run_experiment(_ordering_grid("student", [0.05], 0.5))
        by_replicate = {}
        for run in report.runs:
            assert run.ok
            by_replicate.setdefault(run.replicate, {})[run.method] = run.metrics.clean_mape
        wins = sum(pair["fem"] < pair["gmm"] for pair in by_replicate.values())
        assert wins >= 8

    def test_outlier_robustness(self):
        """Contamination hurts FEM's clean-row MAPE less than the baseline's."""
        report = run_experiment(_ordering_grid("gaussian", [0.0, 0.1], 0.1))
        fem_rise = _median(report, "fem", 0.1, "clean_mape") / _median(report, "fem", 0.0, "clean_mape") - 1.0
        gmm_rise = _median(report, "gmm", 0.1, "clean_mape") / _median(report, "gmm", 0.0, "clean_mape") - 1.0
        assert fem_rise < 0.25
        assert gmm_rise > fem_rise


def _three_clusters(seed):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0, 0.0, 0.0], [12.0, 12.0, 0.0, 0.0], [0.0, 12.0, 12.0, 12.0]])
    return np.vstack([c + rng.standard_normal((150, 4)) for c in centers])


class TestBicSelection:
    """Model-order selection on well-separated clusters."""

    def test_gaussian_fitter_finds_three(self):
        """The Gaussian fitter picks K = 3 in at least 7 of 10 seeded runs."""
        picks = [
            select_k(MaskedDataset.complete(_three_clusters(s)), range(1, 7), "gmm", FitConfig(seed=s)).best_k
            for s in range(10)
        ]
        assert sum(k == 3 for k in picks) >= 7

    def test_fem_fitter_at_least_three(self):
        """The FEM fitter picks K of at least 3 in at least 7 of 10 seeded runs."""
        picks = [
            select_k(MaskedDataset.complete(_three_clusters(s)), range(1, 7), "fem", FitConfig(seed=s)).best_k
            for s in range(10)
        ]
        assert sum(k >= 3 for k in picks) >= 7
