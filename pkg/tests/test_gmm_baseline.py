"""Tests for the Gaussian-mixture EM baseline."""

import numpy as np
import pytest
from scipy import stats

from app.models.dataset import MaskedDataset
from app.models.mixture import FitConfig, GaussianMixtureModel
from app.models.synthetic import MissingnessSpec
from app.services.gmm_baseline import (
    covariance_penalty,
    gmm_e_step_missing,
    gmm_fit_impute,
    gmm_impute_with_model,
)
from app.services.init_select import kmeans_init_gaussian, mean_fill
from app.services.linalg import partition_row
from app.services.synthgen import inject_missing


def _two_blobs(seed, n=150, m=3):
    rng = np.random.default_rng(seed)
    half = n // 2
    return np.vstack([rng.standard_normal((half, m)), rng.standard_normal((n - half, m)) * 1.5 + 4.0])


class TestGaussianEStep:
    """Test per-row Gaussian responsibilities and conditional moments."""

    def test_textbook_conditional(self):
        """Bivariate example: conditional mean 0.5 and variance 0.75."""
        model = GaussianMixtureModel(
            weights=[1.0], means=np.zeros((1, 2)), scatters=np.array([[[1.0, 0.5], [0.5, 1.0]]])
        )
        resp, means, covs = gmm_e_step_missing(np.array([1.0, np.nan]), partition_row([True, False]), model)
        np.testing.assert_allclose(resp, [1.0])
        np.testing.assert_allclose(means[0], [0.5])
        np.testing.assert_allclose(covs[0], [[0.75]])

    def test_complete_row_matches_densities(self):
        """A complete row's responsibilities are normalized weighted normal densities."""
        rng = np.random.default_rng(1)
        covs = []
        for _ in range(2):
            a = rng.standard_normal((3, 3))
            covs.append(a @ a.T + np.eye(3))
        model = GaussianMixtureModel(weights=[0.3, 0.7], means=rng.standard_normal((2, 3)), scatters=np.stack(covs))
        row = rng.standard_normal(3)
        resp, _, _ = gmm_e_step_missing(row, partition_row([True] * 3), model)
        dens = np.array(
            [model.weights[k] * stats.multivariate_normal(model.means[k], covs[k]).pdf(row) for k in range(2)]
        )
        np.testing.assert_allclose(resp, dens / dens.sum(), rtol=1e-12)

    def test_conditional_covariance_ignores_observed_values(self):
        """Moving the observed block radially leaves the Gaussian conditional covariance fixed."""
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 5))
        model = GaussianMixtureModel(weights=[1.0], means=np.zeros((1, 5)), scatters=(a @ a.T + np.eye(5))[None])
        part = partition_row([True, True, True, False, False])
        row = np.array([0.4, -0.3, 1.1, np.nan, np.nan])
        _, _, near = gmm_e_step_missing(row, part, model)
        _, _, far = gmm_e_step_missing(row * np.array([10, 10, 10, 1, 1]), part, model)
        np.testing.assert_allclose(far[0], near[0], rtol=1e-12)


class TestGaussianFit:
    """Test the EM fit, its traces and the imputation."""

    def test_single_component_closed_form(self):
        """K = 1 on complete data without penalty: sample mean and biased covariance."""
        data = np.random.default_rng(3).standard_normal((100, 4)) * np.array([1.0, 2.0, 0.5, 3.0])
        init = kmeans_init_gaussian(data, 1)
        model, report, imputed = gmm_fit_impute(MaskedDataset.complete(data), 1, init, FitConfig(covariance_reg=0))
        np.testing.assert_allclose(model.means[0], data.mean(axis=0), rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(model.covariances[0], np.cov(data, rowvar=False, bias=True), rtol=1e-10, atol=1e-12)
        np.testing.assert_array_equal(imputed, data)
        assert report.method == "gmm"

    @pytest.mark.parametrize("seed", range(20))
    def test_loglik_monotone_without_penalty(self, seed):
        """Observed log-likelihood never decreases when the penalty is off."""
        truth = _two_blobs(seed)
        data = inject_missing(truth, MissingnessSpec(rate=0.2, min_observed=1, seed=seed + 100))
        cfg = FitConfig(covariance_reg=0, max_outer_iters=50)
        _, report, _ = gmm_fit_impute(data, 2, kmeans_init_gaussian(mean_fill(data), 2), cfg)
        trace = np.asarray(report.pseudo_loglik_trace)
        slack = 1e-10 * np.maximum(1.0, np.abs(trace[:-1]))
        assert np.all(np.diff(trace) >= -slack)

    def test_penalized_objective_monotone(self):
        """With the penalty on, the penalized objective never decreases."""
        truth = _two_blobs(7)
        data = inject_missing(truth, MissingnessSpec(rate=0.25, min_observed=1, seed=8))
        cfg = FitConfig(covariance_reg=1e-2, max_outer_iters=50)
        _, report, _ = gmm_fit_impute(data, 2, kmeans_init_gaussian(mean_fill(data), 2), cfg)
        objective = np.asarray(report.objective_trace)
        assert len(objective) == len(report.pseudo_loglik_trace)
        assert np.all(np.diff(objective) >= -1e-10 * np.maximum(1.0, np.abs(objective[:-1])))
        assert np.all(objective <= np.asarray(report.pseudo_loglik_trace))

    def test_penalty_scale(self):
        """The penalty is covariance_reg times the mean observed column variance."""
        values = np.array([[1.0, 10.0], [3.0, np.nan], [5.0, 14.0]])
        data = MaskedDataset.from_nan(values)
        expected = 0.1 * np.mean([np.var([1.0, 3.0, 5.0]), np.var([10.0, 14.0])])
        assert covariance_penalty(data, FitConfig(covariance_reg=0.1)) == pytest.approx(expected)
        assert covariance_penalty(data, FitConfig(covariance_reg=0)) == 0.0

    def test_impute_with_fitted_model(self):
        """Imputing with the returned model reproduces the fit's output."""
        truth = _two_blobs(9, n=120, m=4)
        data = inject_missing(truth, MissingnessSpec(rate=0.2, min_observed=1, seed=10))
        model, _, imputed = gmm_fit_impute(data, 2, kmeans_init_gaussian(mean_fill(data), 2))
        again, resp = gmm_impute_with_model(data, model)
        np.testing.assert_allclose(again, imputed, rtol=1e-12)
        np.testing.assert_array_equal(again[data.mask], truth[data.mask])
        assert resp.p.shape == (120, 2)
