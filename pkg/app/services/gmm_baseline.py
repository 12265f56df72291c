"""
Classical EM for Gaussian mixtures with missing data.

The comparison baseline for the FEM fitter: Gaussian conditional moments (no
Mahalanobis-dependent factor), weight-free M-step, and a fixed diagonal
penalty lambda added to every covariance update. The step is an exact EM
step for loglik - lambda/2 * sum_k trace(Sigma_k^{-1}), so that penalized
objective never decreases; with ``covariance_reg = 0`` the observed
log-likelihood itself is monotone.
"""

from __future__ import annotations

import math
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from app.config.logger import app_logger, log_fit_iteration, log_performance
from app.models.dataset import IndexPartition, MaskedDataset, missing_patterns
from app.models.mixture import (
    ConditionalBatch,
    ConditionalBlock,
    FitConfig,
    FitReport,
    GaussianMixtureModel,
    Responsibilities,
)
from app.services.conditional import condition_on_observed
from app.services.fem import EStepResult, IterationCallback, PatternGroups, mixture_imputation
from app.services.linalg import cholesky_factor, ensure_spd, partition_row
from app.utils.errors import DimensionMismatch, FitDiverged, NotPositiveDefinite

METHOD = "gmm"

LOG_2PI = math.log(2.0 * math.pi)


def gmm_e_step_missing(
    row: np.ndarray,
    part: IndexPartition,
    model: GaussianMixtureModel,
    cfg: Optional[FitConfig] = None,
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Responsibilities and Gaussian conditional moments of one row.

    ``row`` is the full m-vector; entries at missing positions are ignored.
    """
    cfg = cfg or FitConfig()
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    x_obs = row[part.observed_index][None, :]
    log_terms = np.empty(model.n_components)
    cond_means: List[np.ndarray] = []
    cond_covs: List[np.ndarray] = []
    for k in range(model.n_components):
        cond = condition_on_observed(x_obs, part, model.means[k], model.scatters[k], cfg.ridge)
        log_terms[k] = math.log(model.weights[k]) - 0.5 * (
            part.d_obs * LOG_2PI + cond.logdet_oo + float(cond.mahal[0])
        )
        cond_means.append(cond.cond_mean[0])
        cond_covs.append(cond.schur)
    return np.exp(log_terms - logsumexp(log_terms)), cond_means, cond_covs


def _gmm_e_step(
    data: MaskedDataset,
    groups: PatternGroups,
    model: GaussianMixtureModel,
    cfg: FitConfig,
) -> EStepResult:
    """Batch E-step; ``pseudo_loglik`` is the exact observed-data log-likelihood."""
    n = data.n_samples
    k_count = model.n_components
    log_terms = np.empty((n, k_count))
    x_tilde = np.repeat(data.filled()[None, :, :], k_count, axis=0)
    blocks: List[List[ConditionalBlock]] = [[] for _ in range(k_count)]
    ridge_events = 0

    for pattern, rows in groups:
        part = partition_row(pattern)
        x_obs = data.values[np.ix_(rows, part.observed_index)]
        for k in range(k_count):
            cond = condition_on_observed(x_obs, part, model.means[k], model.scatters[k], cfg.ridge)
            ridge_events += cond.ridge > 0
            log_terms[rows, k] = math.log(model.weights[k]) - 0.5 * (
                part.d_obs * LOG_2PI + cond.logdet_oo + cond.mahal
            )
            if part.d_mis:
                x_tilde[k][np.ix_(rows, part.missing_index)] = cond.cond_mean
                blocks[k].append(
                    ConditionalBlock(
                        rows=rows,
                        missing_index=part.missing_index,
                        factors=np.ones(rows.shape[0]),
                        schur=cond.schur,
                    )
                )

    log_norm = logsumexp(log_terms, axis=1)
    return EStepResult(
        responsibilities=Responsibilities(np.exp(log_terms - log_norm[:, None])),
        conditionals=ConditionalBatch(x_tilde=x_tilde, blocks=tuple(tuple(b) for b in blocks)),
        pseudo_loglik=float(log_norm.sum()),
        ridge_events=ridge_events,
    )


def covariance_penalty(data: MaskedDataset, cfg: FitConfig) -> float:
    """lambda = covariance_reg * mean observed column variance."""
    if cfg.covariance_reg == 0:
        return 0.0
    variances = np.nanvar(data.values, axis=0)
    scale = float(np.mean(variances))
    return cfg.covariance_reg * (scale if scale > 0 else 1.0)


def _gmm_m_step(
    x_tilde: np.ndarray,
    p: np.ndarray,
    blocks: Sequence[Sequence[ConditionalBlock]],
    penalty: float,
    model_prev: GaussianMixtureModel,
    cfg: FitConfig,
) -> Tuple[GaussianMixtureModel, int]:
    k_count, _, m = x_tilde.shape
    weights = p.mean(axis=0)
    weights = weights / weights.sum()
    means = np.empty((k_count, m))
    covariances = np.empty((k_count, m, m))
    ridge_events = 0
    for k in range(k_count):
        p_k = p[:, k]
        total = float(p_k.sum())
        if not total > 0:
            raise NotPositiveDefinite(f"component {k} lost all responsibility mass")
        mu = (p_k @ x_tilde[k]) / total
        diff = x_tilde[k] - mu
        scatter = (diff * p_k[:, None]).T @ diff
        for block in blocks[k]:
            mis = block.missing_index
            scatter[np.ix_(mis, mis)] += float(np.sum(p_k[block.rows] * block.factors)) * block.schur
        sigma, ridged = ensure_spd((scatter + penalty * np.eye(m)) / total, cfg.ridge, f"covariance {k}")
        means[k], covariances[k] = mu, sigma
        ridge_events += ridged
    if not (np.all(np.isfinite(means)) and np.all(weights > 0)):
        raise NotPositiveDefinite("non-finite mean or empty component after M-step")
    return GaussianMixtureModel(weights=weights, means=means, scatters=covariances), ridge_events


def _penalized_objective(loglik: float, model: GaussianMixtureModel, penalty: float) -> float:
    if penalty == 0:
        return loglik
    trace_inv = sum(float(np.trace(cholesky_factor(s).inverse())) for s in model.scatters)
    return loglik - 0.5 * penalty * trace_inv


def gmm_fit_impute(
    data: MaskedDataset,
    K: int,
    init: GaussianMixtureModel,
    cfg: Optional[FitConfig] = None,
    callback: Optional[IterationCallback] = None,
) -> Tuple[GaussianMixtureModel, FitReport, np.ndarray]:
    """EM fit of a Gaussian mixture on masked data, then conditional-mean imputation.

    ``report.pseudo_loglik_trace`` holds the observed-data log-likelihood at the
    parameters entering each iteration plus the final model;
    ``report.objective_trace`` the matching penalized objective.
    """
    cfg = cfg or FitConfig()
    if data.n_samples <= K:
        raise DimensionMismatch("need more rows than components", detail=f"N={data.n_samples}, K={K}")
    if init.n_components != K or init.n_features != data.n_features:
        raise DimensionMismatch(
            "initial model does not match K and the data dimension",
            detail=f"K={K}, m={data.n_features}, init K={init.n_components}, init m={init.n_features}",
        )

    started = time.perf_counter()
    groups = missing_patterns(data.mask)
    penalty = covariance_penalty(data, cfg)
    model = init
    loglik_trace: List[float] = []
    objective_trace: List[float] = []
    ridge_events = 0
    converged = False
    iteration = 0

    try:
        for iteration in range(1, cfg.max_outer_iters + 1):
            estep = _gmm_e_step(data, groups, model, cfg)
            loglik_trace.append(estep.pseudo_loglik)
            objective_trace.append(_penalized_objective(estep.pseudo_loglik, model, penalty))
            new_model, events = _gmm_m_step(
                estep.conditionals.x_tilde, estep.responsibilities.p, estep.conditionals.blocks, penalty, model, cfg
            )
            ridge_events += estep.ridge_events + events
            change = new_model.max_relative_change(model)
            model = new_model
            log_fit_iteration(METHOD, iteration, estep.pseudo_loglik, change)
            if callback is not None:
                callback(iteration, model)
            if change < cfg.outer_tol:
                converged = True
                break
        final = _gmm_e_step(data, groups, model, cfg)
    except NotPositiveDefinite as exc:
        app_logger.warning(f"GMM fit diverged at iteration {iteration}: {exc.message}")
        raise FitDiverged(iteration, exc.message) from exc

    loglik_trace.append(final.pseudo_loglik)
    objective_trace.append(_penalized_objective(final.pseudo_loglik, model, penalty))
    if not converged:
        app_logger.warning(f"GMM did not converge within {cfg.max_outer_iters} iterations")

    elapsed = time.perf_counter() - started
    report = FitReport(
        method=METHOD,
        iterations=iteration,
        converged=converged,
        pseudo_loglik_trace=loglik_trace,
        labels=final.responsibilities.labels(),
        responsibilities=final.responsibilities,
        objective_trace=objective_trace,
        ridge_events=ridge_events + final.ridge_events,
        elapsed_seconds=elapsed,
    )
    log_performance(
        "gmm.fit",
        elapsed,
        iterations=iteration,
        converged=converged,
        n_samples=data.n_samples,
        n_components=K,
    )
    imputed = mixture_imputation(data, final.responsibilities.p, final.conditionals.x_tilde)
    return model, report, imputed


def gmm_impute_with_model(
    data: MaskedDataset,
    model: GaussianMixtureModel,
    cfg: Optional[FitConfig] = None,
) -> Tuple[np.ndarray, Responsibilities]:
    """One E-step on frozen Gaussian parameters followed by the mixture imputation."""
    if model.n_features != data.n_features:
        raise DimensionMismatch(
            "model dimension does not match the data",
            detail=f"model m={model.n_features}, data m={data.n_features}",
        )
    estep = _gmm_e_step(data, missing_patterns(data.mask), model, cfg or FitConfig())
    imputed = mixture_imputation(data, estep.responsibilities.p, estep.conditionals.x_tilde)
    return imputed, estep.responsibilities
