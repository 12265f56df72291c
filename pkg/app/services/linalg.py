"""Dense linear-algebra contracts shared by every fitter.

Row partitioning, scatter-block extraction, Mahalanobis distances and
Cholesky-based solves with a single ridge retry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from app.config.logger import app_logger
from app.models.dataset import IndexPartition, ScatterView
from app.utils.errors import AllMissing, DimensionMismatch, NotPositiveDefinite

# Relative jitter used when a factorization fails and no explicit ridge is set.
RIDGE_FALLBACK = 1e-8


def partition_row(mask_row: Sequence[bool]) -> IndexPartition:
    """Split a mask row into sorted observed and missing column indices."""
    mask_row = np.asarray(mask_row, dtype=bool).reshape(-1)
    observed = np.flatnonzero(mask_row)
    if observed.size == 0:
        raise AllMissing("row has no observed entry")
    missing = np.flatnonzero(~mask_row)
    return IndexPartition(observed=tuple(int(i) for i in observed), missing=tuple(int(i) for i in missing))


def extract_blocks(sigma: np.ndarray, part: IndexPartition) -> ScatterView:
    """oo / om / mo / mm blocks of ``sigma`` under ``part``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    m = sigma.shape[0]
    if sigma.ndim != 2 or sigma.shape[1] != m:
        raise DimensionMismatch("sigma must be square", detail=f"got {sigma.shape}")
    indices = part.observed + part.missing
    if any(i < 0 or i >= m for i in indices) or part.m != m:
        raise DimensionMismatch(
            "partition does not match matrix dimension",
            detail=f"m={m}, observed={part.observed}, missing={part.missing}",
        )
    obs = part.observed_index
    mis = part.missing_index
    om = sigma[np.ix_(obs, mis)]
    return ScatterView(
        oo=sigma[np.ix_(obs, obs)],
        om=om,
        mo=om.T.copy(),
        mm=sigma[np.ix_(mis, mis)],
        partition=part,
    )


def mahalanobis(x: np.ndarray, mu: np.ndarray, sigma_inv: np.ndarray) -> float:
    """(x - mu)^T sigma_inv (x - mu), clipped at zero."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    sigma_inv = np.asarray(sigma_inv, dtype=np.float64)
    d = x.shape[0]
    if mu.shape[0] != d or sigma_inv.shape != (d, d):
        raise DimensionMismatch(
            "mahalanobis operands disagree",
            detail=f"x={x.shape}, mu={mu.shape}, sigma_inv={sigma_inv.shape}",
        )
    diff = x - mu
    return max(float(diff @ sigma_inv @ diff), 0.0)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower Cholesky factor of an SPD matrix with its log-determinant."""

    lower: np.ndarray
    logdet: float
    ridge: float = 0.0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return la.cho_solve((self.lower, True), rhs, check_finite=False)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.lower.shape[0]))


def cholesky_factor(sigma: np.ndarray) -> CholeskyFactor:
    """Factor an SPD matrix; NotPositiveDefinite on a non-positive pivot."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionMismatch("sigma must be square", detail=f"got {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        lower, _ = la.cho_factor(sigma, lower=True, check_finite=False)
    except la.LinAlgError as exc:
        raise NotPositiveDefinite("Cholesky factorization failed", detail=str(exc)) from exc
    diag = np.diag(lower)
    if np.any(diag <= 0):
        raise NotPositiveDefinite("Cholesky factorization produced a non-positive pivot")
    return CholeskyFactor(lower=np.tril(lower), logdet=2.0 * float(np.log(diag).sum()))


def spd_solve_and_logdet(sigma: np.ndarray, rhs: np.ndarray) -> Tuple[np.ndarray, float]:
    """Solve sigma @ X = rhs and return (X, log det sigma)."""
    factor = cholesky_factor(sigma)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != factor.lower.shape[0]:
        raise DimensionMismatch("rhs rows must match sigma", detail=f"sigma={sigma.shape}, rhs={rhs.shape}")
    return factor.solve(rhs), factor.logdet


def factor_with_retry(
    sigma: np.ndarray,
    ridge: float = 0.0,
    reference_trace: Optional[float] = None,
    context: str = "scatter",
) -> CholeskyFactor:
    """Factor ``sigma``; on failure retry once with a diagonal ridge.

    The ridge is ``ridge`` when positive, otherwise ``RIDGE_FALLBACK`` times
    the mean diagonal of ``sigma`` (or of ``reference_trace`` when given).
    """
    try:
        return cholesky_factor(sigma)
    except NotPositiveDefinite:
        sigma = np.asarray(sigma, dtype=np.float64)
        m = sigma.shape[0]
        trace = reference_trace if reference_trace is not None else float(np.trace(sigma))
        jitter = ridge if ridge > 0 else RIDGE_FALLBACK * trace / m
        if not np.isfinite(jitter) or jitter <= 0:
            raise
        app_logger.warning(f"Factorization of {context} failed; retrying with ridge {jitter:.3e}")
        factor = cholesky_factor(sigma + jitter * np.eye(m))
        return CholeskyFactor(lower=factor.lower, logdet=factor.logdet, ridge=jitter)


def symmetrize(sigma: np.ndarray) -> np.ndarray:
    return 0.5 * (sigma + np.swapaxes(sigma, -1, -2))


def normalize_trace(sigma: np.ndarray) -> np.ndarray:
    """Rescale so that trace(sigma) equals its dimension."""
    m = sigma.shape[-1]
    trace = float(np.trace(sigma))
    if not np.isfinite(trace) or trace <= 0:
        raise NotPositiveDefinite("scatter matrix has non-positive trace")
    return sigma * (m / trace)


def ensure_spd(sigma: np.ndarray, ridge: float = 0.0, context: str = "scatter") -> Tuple[np.ndarray, bool]:
    """Return ``(sigma, ridged)`` with one diagonal ridge added if ``sigma`` is not SPD.

    The ridge is ``ridge`` when positive, otherwise ``RIDGE_FALLBACK`` times the
    mean diagonal (or times one for a zero matrix).
    """
    sigma = symmetrize(np.asarray(sigma, dtype=np.float64))
    if not np.all(np.isfinite(sigma)):
        raise NotPositiveDefinite(f"{context} has non-finite entries")
    try:
        cholesky_factor(sigma)
        return sigma, False
    except NotPositiveDefinite:
        pass
    m = sigma.shape[0]
    trace = float(np.trace(sigma))
    jitter = ridge if ridge > 0 else RIDGE_FALLBACK * (trace / m if trace > 0 else 1.0)
    app_logger.warning(f"{context} is not positive definite; adding ridge {jitter:.3e}")
    ridged = sigma + jitter * np.eye(m)
    cholesky_factor(ridged)
    return ridged, True


def stabilize_scatter(sigma: np.ndarray, ridge: float = 0.0, context: str = "scatter") -> Tuple[np.ndarray, bool]:
    """Trace-normalize an M-step scatter, ridging once if it is not SPD.

    A zero scatter (all points equal) comes out as the identity.
    """
    sigma = symmetrize(np.asarray(sigma, dtype=np.float64))
    if not np.all(np.isfinite(sigma)):
        raise NotPositiveDefinite(f"{context} has non-finite entries")
    m = sigma.shape[0]
    trace = float(np.trace(sigma))
    candidate = sigma * (m / trace) if trace > 0 else np.zeros_like(sigma)
    candidate, ridged = ensure_spd(candidate, ridge, context)
    return normalize_trace(candidate), ridged
