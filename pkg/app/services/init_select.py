"""
Initialization and model-order selection.

Missing cells are mean-filled, K-means (scikit-learn, random init, seeded
restarts) provides the initial partition, and the BIC ranks candidate
component counts. FEM fits are ranked on their pseudo-log-likelihood, GMM fits
on the Gaussian log-likelihood; the two are never compared with each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.cluster import KMeans

from app.config.logger import app_logger
from app.models.dataset import MaskedDataset
from app.models.mixture import FitConfig, FitReport, GaussianMixtureModel, InitPlan, MixtureModel
from app.services.fem import fit_impute
from app.services.gmm_baseline import gmm_fit_impute
from app.services.linalg import normalize_trace
from app.utils.errors import (
    DegenerateClustering,
    DimensionMismatch,
    EmptyColumn,
    ImputationError,
    SelectionFailed,
    ValidationFailure,
)

Method = Literal["fem", "gmm"]

# Relative ridge turning within-cluster covariances into SPD matrices.
COVARIANCE_RIDGE = 1e-6


@dataclass
class FitOutcome:
    model: Union[MixtureModel, GaussianMixtureModel]
    report: FitReport
    imputed: np.ndarray


@dataclass
class SelectionResult:
    best_k: int
    table: List[Dict[str, object]]
    best_fit: FitOutcome = field(repr=False)


def mean_fill(data: MaskedDataset) -> np.ndarray:
    """Replace missing cells with the observed mean of their column."""
    counts = data.mask.sum(axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyColumn("every column needs at least one observed value", detail=f"empty columns: {empty.tolist()}")
    column_means = np.nanmean(data.values, axis=0)
    return data.filled(0.0) + np.where(data.mask, 0.0, column_means[None, :])


def _sklearn_seed(seed: int) -> int:
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def _kmeans_moments(filled: np.ndarray, K: int, plan: InitPlan) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cluster weights, means and ridged within-cluster covariances."""
    filled = np.asarray(filled, dtype=np.float64)
    if filled.ndim != 2 or not np.all(np.isfinite(filled)):
        raise DimensionMismatch("K-means needs a finite N x m matrix")
    n, m = filled.shape
    if n <= K:
        raise DimensionMismatch("need more rows than components", detail=f"N={n}, K={K}")

    kmeans = KMeans(
        n_clusters=K,
        init="random",
        n_init=plan.kmeans_restarts,
        max_iter=plan.kmeans_max_iters,
        random_state=_sklearn_seed(plan.seed),
        algorithm="lloyd",
    )
    labels = kmeans.fit_predict(filled)
    counts = np.bincount(labels, minlength=K)
    if np.count_nonzero(counts) < K:
        raise DegenerateClustering(
            f"K-means found {np.count_nonzero(counts)} nonempty clusters for K={K}",
            detail=f"cluster sizes: {counts.tolist()}",
        )

    weights = np.maximum(counts / n, 1.0 / (10 * n))
    weights = weights / weights.sum()
    global_scale = float(np.mean(np.var(filled, axis=0)))
    means = np.empty((K, m))
    covariances = np.empty((K, m, m))
    for k in range(K):
        members = filled[labels == k]
        means[k] = members.mean(axis=0)
        cov = np.atleast_2d(np.cov(members, rowvar=False, bias=True))
        scale = float(np.trace(cov)) / m
        if scale <= 0:
            scale = global_scale if global_scale > 0 else 1.0
        covariances[k] = cov + COVARIANCE_RIDGE * scale * np.eye(m)
    return weights, means, covariances


def kmeans_init(filled: np.ndarray, K: int, plan: Optional[InitPlan] = None) -> MixtureModel:
    """Initial elliptical mixture with trace-normalized scatters."""
    weights, means, covariances = _kmeans_moments(filled, K, plan or InitPlan())
    scatters = np.stack([normalize_trace(c) for c in covariances])
    return MixtureModel(weights=weights, means=means, scatters=scatters)


def kmeans_init_gaussian(filled: np.ndarray, K: int, plan: Optional[InitPlan] = None) -> GaussianMixtureModel:
    """Initial Gaussian mixture keeping the raw within-cluster covariances."""
    weights, means, covariances = _kmeans_moments(filled, K, plan or InitPlan())
    return GaussianMixtureModel(weights=weights, means=means, scatters=covariances)


def n_params(K: int, m: int) -> int:
    return (K - 1) + K * m + K * m * (m + 1) // 2


def bic(pseudo_loglik: float, n_params: int, N: int) -> float:
    """-2 L + p ln N (lower is better)."""
    if N < 1:
        raise DimensionMismatch("BIC needs at least one sample", detail=f"N={N}")
    return -2.0 * pseudo_loglik + n_params * math.log(N)


def fit_with_init(
    method: Method,
    data: MaskedDataset,
    K: int,
    cfg: Optional[FitConfig] = None,
    plan: Optional[InitPlan] = None,
) -> FitOutcome:
    """Mean fill, K-means initialization and one fit of the requested family."""
    cfg = cfg or FitConfig()
    plan = plan or InitPlan(seed=cfg.seed)
    filled = mean_fill(data)
    if method == "fem":
        model, report, imputed = fit_impute(data, K, kmeans_init(filled, K, plan), cfg)
    elif method == "gmm":
        model, report, imputed = gmm_fit_impute(data, K, kmeans_init_gaussian(filled, K, plan), cfg)
    else:
        raise ValidationFailure(f"unknown method '{method}'", detail="expected 'fem' or 'gmm'")
    return FitOutcome(model=model, report=report, imputed=imputed)


def select_k(
    data: MaskedDataset,
    k_range: Sequence[int],
    fitter: Method,
    cfg: Optional[FitConfig] = None,
    plan: Optional[InitPlan] = None,
) -> SelectionResult:
    """Fit each candidate K and keep the smallest BIC (ties to the smallest K).

    Every K starts from the same seed. A K whose fit fails numerically is left
    out of the table.
    """
    candidates = sorted({int(k) for k in k_range})
    if not candidates:
        raise ValidationFailure("k_range must not be empty")
    if candidates[0] < 1 or candidates[-1] >= data.n_samples:
        raise ValidationFailure(
            "every candidate K must satisfy 1 <= K < N",
            detail=f"k_range={candidates}, N={data.n_samples}",
        )

    table: List[Dict[str, object]] = []
    fits: Dict[int, FitOutcome] = {}
    for k in candidates:
        try:
            outcome = fit_with_init(fitter, data, k, cfg, plan)
        except ValidationFailure:
            raise
        except ImputationError as exc:
            app_logger.warning(f"{fitter.upper()} fit with K={k} excluded from selection: {exc.message}")
            continue
        p = n_params(k, data.n_features)
        loglik = outcome.report.final_loglik
        table.append(
            {
                "k": k,
                "bic": bic(loglik, p, data.n_samples),
                "loglik": loglik,
                "n_params": p,
                "converged": outcome.report.converged,
                "iterations": outcome.report.iterations,
            }
        )
        fits[k] = outcome

    if not table:
        raise SelectionFailed("every candidate K failed to fit", detail=f"k_range={candidates}")
    best = min(table, key=lambda row: (row["bic"], row["k"]))
    best_k = int(best["k"])
    app_logger.info(f"BIC selected K={best_k} for {fitter.upper()} over k_range={candidates}")
    return SelectionResult(best_k=best_k, table=table, best_fit=fits[best_k])
