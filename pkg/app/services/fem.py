"""
Flexible EM for mixtures of elliptical distributions.

This module fits a K-component elliptical mixture without knowing the density
generator, on complete data and on data with missing cells:
- Angular-Gaussian responsibilities computed on observed coordinates only
- Student-t conditional moments of the missing block
- Fixed-point M-step with robust 1/Q weights and trace-normalized scatters
- Final imputation as the responsibility-weighted conditional mean

Complete data goes through the same kernels with an all-observed mask, so the
two entry points share one trajectory.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from app.config.logger import app_logger, log_fit_iteration, log_performance
from app.models.dataset import IndexPartition, MaskedDataset, missing_patterns
from app.models.mixture import (
    ConditionalBatch,
    ConditionalBlock,
    ConditionalMoments,
    FitConfig,
    FitReport,
    MixtureModel,
    Responsibilities,
)
from app.services.conditional import condition_on_observed
from app.services.linalg import factor_with_retry, partition_row, stabilize_scatter
from app.utils.errors import (
    DimensionMismatch,
    FitDiverged,
    InsufficientObserved,
    NoInteriorMaximum,
    NotPositiveDefinite,
)

METHOD = "fem"

# Rows with missing cells need d_obs - 2 > 0 for a finite conditional covariance.
MIN_OBSERVED = 3

PROFILE_LOWER = 1e-6
PROFILE_UPPER = 1e6

IterationCallback = Callable[[int, MixtureModel], None]
PatternGroups = List[Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class EStepResult:
    responsibilities: Responsibilities
    conditionals: ConditionalBatch
    pseudo_loglik: float
    ridge_events: int = 0


def profile_argsup(
    generator: Callable[[float], float],
    m: int,
    lower: float = PROFILE_LOWER,
    upper: float = PROFILE_UPPER,
    rtol: float = 1e-8,
) -> float:
    """argsup over t of t^{m/2} g(t), searched on log t.

    Bounded Brent search (golden section with parabolic steps) on
    ``[log lower, log upper]``; an absolute tolerance on log t is a relative
    tolerance on t.
    """
    if m < 1:
        raise DimensionMismatch("dimension must be at least 1", detail=f"m={m}")
    half_m = 0.5 * m

    def negative_log_profile(u: float) -> float:
        value = generator(math.exp(u))
        if not value > 0:
            return math.inf
        return -(half_m * u + math.log(value))

    lo, hi = math.log(lower), math.log(upper)
    result = minimize_scalar(negative_log_profile, bounds=(lo, hi), method="bounded", options={"xatol": rtol})
    edge = min(result.x - lo, hi - result.x)
    at_bound = min(negative_log_profile(lo), negative_log_profile(hi)) <= result.fun
    if edge < 1e-4 or at_bound:
        raise NoInteriorMaximum(
            "profile has no interior maximum on the search interval",
            detail=f"interval=[{lower:g}, {upper:g}], argsup near t={math.exp(result.x):.6g}",
        )
    return math.exp(result.x)


def insufficient_rows(data: MaskedDataset, min_observed: int = MIN_OBSERVED) -> np.ndarray:
    """Rows with at least one missing cell and fewer than ``min_observed`` observed ones."""
    counts = data.observed_counts()
    return np.flatnonzero((counts < data.n_features) & (counts < min_observed))


def _check_observed_counts(data: MaskedDataset) -> None:
    offending = insufficient_rows(data)
    if offending.size:
        raise InsufficientObserved(offending, MIN_OBSERVED)


def _check_model(data: MaskedDataset, k: int, init: MixtureModel) -> None:
    if data.n_samples <= k:
        raise DimensionMismatch("need more rows than components", detail=f"N={data.n_samples}, K={k}")
    if init.n_components != k or init.n_features != data.n_features:
        raise DimensionMismatch(
            "initial model does not match K and the data dimension",
            detail=f"K={k}, m={data.n_features}, init K={init.n_components}, init m={init.n_features}",
        )


def _e_step(
    data: MaskedDataset,
    groups: PatternGroups,
    model: MixtureModel,
    cfg: FitConfig,
) -> EStepResult:
    """Observed-data E-step, one factorization per (pattern, component)."""
    n, m = data.n_samples, data.n_features
    k_count = model.n_components
    values = data.values
    log_terms = np.empty((n, k_count))
    x_tilde = np.repeat(data.filled()[None, :, :], k_count, axis=0)
    blocks: List[List[ConditionalBlock]] = [[] for _ in range(k_count)]
    ridge_events = 0

    for pattern, rows in groups:
        part = partition_row(pattern)
        if part.d_mis and part.d_obs < MIN_OBSERVED:
            raise InsufficientObserved(rows, MIN_OBSERVED)
        x_obs = values[np.ix_(rows, part.observed_index)]
        for k in range(k_count):
            cond = condition_on_observed(x_obs, part, model.means[k], model.scatters[k], cfg.ridge)
            ridge_events += cond.ridge > 0
            q = np.maximum(cond.mahal, cfg.distance_floor)
            log_terms[rows, k] = math.log(model.weights[k]) - 0.5 * cond.logdet_oo - 0.5 * part.d_obs * np.log(q)
            if part.d_mis:
                x_tilde[k][np.ix_(rows, part.missing_index)] = cond.cond_mean
                blocks[k].append(
                    ConditionalBlock(
                        rows=rows,
                        missing_index=part.missing_index,
                        factors=cond.mahal / (part.d_obs - 2),
                        schur=cond.schur,
                    )
                )

    log_norm = logsumexp(log_terms, axis=1)
    p = np.exp(log_terms - log_norm[:, None])
    return EStepResult(
        responsibilities=Responsibilities(p),
        conditionals=ConditionalBatch(x_tilde=x_tilde, blocks=tuple(tuple(b) for b in blocks)),
        pseudo_loglik=float(log_norm.sum()),
        ridge_events=ridge_events,
    )


def _conditional_scatter(blocks: Sequence[ConditionalBlock], p_k: np.ndarray, sigma_inv: np.ndarray) -> np.ndarray:
    """sum_i p_ik * sigma_tilde_ik / trace(sigma^{-1} sigma_tilde_ik); 0/0 terms are zero."""
    m = sigma_inv.shape[0]
    term = np.zeros((m, m))
    for block in blocks:
        mis = block.missing_index
        base_trace = float(np.sum(sigma_inv[np.ix_(mis, mis)] * block.schur))
        traces = block.factors * base_trace
        live = traces > 0
        if not np.any(live):
            continue
        weight = float(np.sum(p_k[block.rows][live] * block.factors[live] / traces[live]))
        term[np.ix_(mis, mis)] += weight * block.schur
    return term


def _update_component(
    x_tilde_k: np.ndarray,
    p_k: np.ndarray,
    blocks: Sequence[ConditionalBlock],
    mu: np.ndarray,
    sigma: np.ndarray,
    cfg: FitConfig,
) -> Tuple[np.ndarray, np.ndarray, int]:
    """Inner fixed-point loop for one component's mean and scatter."""
    m = x_tilde_k.shape[1]
    total = float(p_k.sum())
    if not total > 0:
        raise NotPositiveDefinite("component lost all responsibility mass")
    ridge_events = 0
    for _ in range(cfg.max_inner_iters):
        factor = factor_with_retry(sigma, ridge=cfg.ridge, context="component scatter")
        ridge_events += factor.ridge > 0
        diff = x_tilde_k - mu
        q = np.maximum(np.einsum("ij,ji->i", diff, factor.solve(diff.T)), 0.0)
        wp = p_k / np.maximum(q, cfg.distance_floor)
        mu_new = (wp @ x_tilde_k) / wp.sum()

        scatter = (diff * wp[:, None]).T @ diff
        if blocks:
            scatter += _conditional_scatter(blocks, p_k, factor.inverse())
        sigma_new, ridged = stabilize_scatter(m * scatter / total, cfg.ridge, "component scatter")
        ridge_events += ridged

        change = max(
            float(np.linalg.norm(mu_new - mu) / max(float(np.linalg.norm(mu)), 1e-12)),
            float(np.linalg.norm(sigma_new - sigma) / max(float(np.linalg.norm(sigma)), 1e-12)),
        )
        mu, sigma = mu_new, sigma_new
        if change < cfg.inner_tol:
            break
    return mu, sigma, ridge_events


def _m_step(
    x_tilde: np.ndarray,
    p: np.ndarray,
    blocks: Sequence[Sequence[ConditionalBlock]],
    model_prev: MixtureModel,
    cfg: FitConfig,
) -> Tuple[MixtureModel, int]:
    k_count = model_prev.n_components
    weights = p.mean(axis=0)
    weights = weights / weights.sum()
    means = np.empty_like(model_prev.means)
    scatters = np.empty_like(model_prev.scatters)
    ridge_events = 0
    for k in range(k_count):
        mu, sigma, events = _update_component(
            x_tilde[k], p[:, k], blocks[k], model_prev.means[k], model_prev.scatters[k], cfg
        )
        means[k], scatters[k] = mu, sigma
        ridge_events += events
    if not (np.all(np.isfinite(means)) and np.all(weights > 0)):
        raise NotPositiveDefinite("non-finite mean or empty component after M-step")
    return MixtureModel(weights=weights, means=means, scatters=scatters), ridge_events


def e_step_complete(data: np.ndarray, model: MixtureModel, cfg: Optional[FitConfig] = None) -> Responsibilities:
    """Responsibilities on a fully observed matrix."""
    dataset = _complete_dataset(data)
    return _e_step(dataset, missing_patterns(dataset.mask), model, cfg or FitConfig()).responsibilities


def m_step_complete(
    data: np.ndarray,
    resp: Responsibilities,
    model_prev: MixtureModel,
    cfg: Optional[FitConfig] = None,
) -> MixtureModel:
    """Fixed-point M-step on a fully observed matrix."""
    values = _complete_dataset(data).values
    if resp.p.shape != (values.shape[0], model_prev.n_components):
        raise DimensionMismatch("responsibilities do not match data and model", detail=f"got {resp.p.shape}")
    x_tilde = np.repeat(values[None, :, :], model_prev.n_components, axis=0)
    blocks = tuple(() for _ in range(model_prev.n_components))
    model, _ = _m_step(x_tilde, resp.p, blocks, model_prev, cfg or FitConfig())
    return model


def responsibilities_observed(
    row: np.ndarray,
    part: IndexPartition,
    model: MixtureModel,
    cfg: Optional[FitConfig] = None,
) -> np.ndarray:
    """K-vector of responsibilities for one row using its observed coordinates only.

    ``row`` is the full m-vector; entries at missing positions are ignored.
    """
    cfg = cfg or FitConfig()
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    x_obs = row[part.observed_index][None, :]
    log_terms = np.empty(model.n_components)
    for k in range(model.n_components):
        cond = condition_on_observed(x_obs, part, model.means[k], model.scatters[k], cfg.ridge)
        q = max(float(cond.mahal[0]), cfg.distance_floor)
        log_terms[k] = math.log(model.weights[k]) - 0.5 * cond.logdet_oo - 0.5 * part.d_obs * math.log(q)
    return np.exp(log_terms - logsumexp(log_terms))


def conditional_student_params(
    row_obs: np.ndarray,
    part: IndexPartition,
    mu: np.ndarray,
    sigma: np.ndarray,
) -> Tuple[int, np.ndarray, np.ndarray]:
    """Student-t law of the missing block given the observed one.

    Degrees of freedom ``d_obs``, location the Gaussian regression mean, scale
    ``(Q_o / d_obs)`` times the Schur complement.
    """
    if part.d_mis == 0:
        raise DimensionMismatch("row has no missing coordinate to condition")
    cond = condition_on_observed(np.asarray(row_obs, dtype=np.float64)[None, :], part, mu, sigma)
    scale = (float(cond.mahal[0]) / part.d_obs) * cond.schur
    return part.d_obs, cond.cond_mean[0], scale


def conditional_moments(
    row: np.ndarray,
    part: IndexPartition,
    component_k: int,
    model: MixtureModel,
) -> ConditionalMoments:
    """Conditional mean and covariance of the missing block under one component."""
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    m = part.m
    x_tilde = np.array(row, copy=True)
    sigma_tilde = np.zeros((m, m))
    if part.d_mis == 0:
        return ConditionalMoments(np.empty(0), np.empty((0, 0)), x_tilde, sigma_tilde)
    if part.d_obs < MIN_OBSERVED:
        raise InsufficientObserved([], MIN_OBSERVED)

    cond = condition_on_observed(
        row[part.observed_index][None, :], part, model.means[component_k], model.scatters[component_k]
    )
    cond_mean = cond.cond_mean[0]
    cond_cov = (float(cond.mahal[0]) / (part.d_obs - 2)) * cond.schur
    mis = part.missing_index
    x_tilde[mis] = cond_mean
    sigma_tilde[np.ix_(mis, mis)] = cond_cov
    return ConditionalMoments(cond_mean, cond_cov, x_tilde, sigma_tilde)


def e_step_missing(data: MaskedDataset, model: MixtureModel, cfg: Optional[FitConfig] = None) -> EStepResult:
    """Batch E-step on a masked dataset: responsibilities plus conditional statistics."""
    _check_observed_counts(data)
    return _e_step(data, missing_patterns(data.mask), model, cfg or FitConfig())


def m_step_missing(
    rows: MaskedDataset,
    resp: Responsibilities,
    cond: ConditionalBatch,
    model_prev: MixtureModel,
    cfg: Optional[FitConfig] = None,
) -> MixtureModel:
    """Fixed-point M-step with the conditional-covariance correction."""
    expected = (model_prev.n_components, rows.n_samples, rows.n_features)
    if cond.x_tilde.shape != expected or resp.p.shape != expected[:2][::-1]:
        raise DimensionMismatch(
            "E-step statistics do not match data and model",
            detail=f"x_tilde={cond.x_tilde.shape}, p={resp.p.shape}, expected x_tilde={expected}",
        )
    model, _ = _m_step(cond.x_tilde, resp.p, cond.blocks, model_prev, cfg or FitConfig())
    return model


def mixture_imputation(data: MaskedDataset, p: np.ndarray, x_tilde: np.ndarray) -> np.ndarray:
    """Fill missing cells with sum_k p_ik x_tilde_ik; observed cells pass through."""
    imputed = data.filled()
    blended = np.einsum("nk,knm->nm", p, x_tilde)
    missing = ~data.mask
    imputed[missing] = blended[missing]
    return imputed


def _run_fem(
    data: MaskedDataset,
    init: MixtureModel,
    cfg: FitConfig,
    callback: Optional[IterationCallback],
) -> Tuple[MixtureModel, FitReport, EStepResult]:
    started = time.perf_counter()
    groups = missing_patterns(data.mask)
    model = init
    trace: List[float] = []
    ridge_events = 0
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_outer_iters + 1):
        try:
            estep = _e_step(data, groups, model, cfg)
            trace.append(estep.pseudo_loglik)
            new_model, events = _m_step(
                estep.conditionals.x_tilde, estep.responsibilities.p, estep.conditionals.blocks, model, cfg
            )
        except NotPositiveDefinite as exc:
            app_logger.warning(f"FEM fit diverged at iteration {iteration}: {exc.message}")
            raise FitDiverged(iteration, exc.message) from exc
        ridge_events += estep.ridge_events + events
        change = new_model.max_relative_change(model)
        model = new_model
        log_fit_iteration(METHOD, iteration, estep.pseudo_loglik, change)
        if callback is not None:
            callback(iteration, model)
        if change < cfg.outer_tol:
            converged = True
            break

    try:
        final = _e_step(data, groups, model, cfg)
    except NotPositiveDefinite as exc:
        raise FitDiverged(iteration, exc.message) from exc
    trace.append(final.pseudo_loglik)
    if not converged:
        app_logger.warning(f"FEM did not converge within {cfg.max_outer_iters} iterations")

    elapsed = time.perf_counter() - started
    report = FitReport(
        method=METHOD,
        iterations=iteration,
        converged=converged,
        pseudo_loglik_trace=trace,
        labels=final.responsibilities.labels(),
        responsibilities=final.responsibilities,
        ridge_events=ridge_events + final.ridge_events,
        elapsed_seconds=elapsed,
    )
    log_performance(
        "fem.fit",
        elapsed,
        iterations=iteration,
        converged=converged,
        n_samples=data.n_samples,
        n_components=model.n_components,
    )
    return model, report, final


def fit_complete(
    data: np.ndarray,
    K: int,
    init: MixtureModel,
    cfg: Optional[FitConfig] = None,
    callback: Optional[IterationCallback] = None,
) -> Tuple[MixtureModel, FitReport]:
    """Fit the mixture on a fully observed matrix.

    ``report.pseudo_loglik_trace[t]`` is evaluated at the parameters entering
    iteration ``t + 1``; its last entry is at the returned model.
    """
    dataset = _complete_dataset(data)
    _check_model(dataset, K, init)
    model, report, _ = _run_fem(dataset, init, cfg or FitConfig(), callback)
    return model, report


def fit_impute(
    data: MaskedDataset,
    K: int,
    init: MixtureModel,
    cfg: Optional[FitConfig] = None,
    callback: Optional[IterationCallback] = None,
) -> Tuple[MixtureModel, FitReport, np.ndarray]:
    """Fit on a masked dataset and impute every missing cell."""
    _check_observed_counts(data)
    _check_model(data, K, init)
    model, report, final = _run_fem(data, init, cfg or FitConfig(), callback)
    imputed = mixture_imputation(data, final.responsibilities.p, final.conditionals.x_tilde)
    return model, report, imputed


def impute_with_model(
    data: MaskedDataset,
    model: MixtureModel,
    cfg: Optional[FitConfig] = None,
) -> Tuple[np.ndarray, Responsibilities]:
    """One E-step on frozen parameters followed by the mixture imputation."""
    if model.n_features != data.n_features:
        raise DimensionMismatch(
            "model dimension does not match the data",
            detail=f"model m={model.n_features}, data m={data.n_features}",
        )
    estep = e_step_missing(data, model, cfg)
    imputed = mixture_imputation(data, estep.responsibilities.p, estep.conditionals.x_tilde)
    return imputed, estep.responsibilities


def _complete_dataset(data: np.ndarray) -> MaskedDataset:
    values = np.asarray(data, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionMismatch("data must be an N x m matrix", detail=f"got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DimensionMismatch("complete-data fitting needs a fully observed finite matrix")
    return MaskedDataset.complete(values)
