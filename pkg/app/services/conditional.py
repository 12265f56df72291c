"""Conditioning of a scatter matrix on the observed block of a row pattern.

Shared by the FEM and GMM E-steps: one Cholesky factorization of the oo block
per (pattern, component) yields the observed log-determinant, the observed
Mahalanobis distances, the regression of the missing block on the observed
one, and the Schur complement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from app.models.dataset import IndexPartition
from app.services.linalg import extract_blocks, factor_with_retry, symmetrize


@dataclass(frozen=True)
class BlockConditional:
    """Observed-block quantities for ``n`` rows sharing one partition."""

    logdet_oo: float
    mahal: np.ndarray
    cond_mean: np.ndarray
    schur: np.ndarray
    ridge: float = 0.0


def condition_on_observed(
    x_obs: np.ndarray,
    part: IndexPartition,
    mu: np.ndarray,
    sigma: np.ndarray,
    ridge: float = 0.0,
) -> BlockConditional:
    """Condition ``N(mu, sigma)``-shaped structure on observed coordinates.

    ``x_obs`` is ``(n, d_obs)``. Returns per-row observed Mahalanobis distances
    ``(n,)``, conditional means of the missing block ``(n, d_mis)`` and the
    Schur complement ``sigma_mm - sigma_mo sigma_oo^{-1} sigma_om``.
    """
    x_obs = np.atleast_2d(np.asarray(x_obs, dtype=np.float64))
    mu = np.asarray(mu, dtype=np.float64)
    view = extract_blocks(sigma, part)
    factor = factor_with_retry(view.oo, ridge=ridge, context="observed scatter block")

    n = x_obs.shape[0]
    diff = x_obs - mu[part.observed_index]
    rhs = np.hstack([diff.T, view.om])
    solved = factor.solve(rhs)
    solved_diff = solved[:, :n]
    mahal = np.maximum(np.einsum("ji,ji->i", diff.T, solved_diff), 0.0)

    if part.d_mis:
        cond_mean = mu[part.missing_index][None, :] + solved_diff.T @ view.om
        schur = symmetrize(view.mm - view.mo @ solved[:, n:])
    else:
        cond_mean = np.empty((n, 0))
        schur = np.empty((0, 0))
    return BlockConditional(
        logdet_oo=factor.logdet,
        mahal=mahal,
        cond_mean=cond_mean,
        schur=schur,
        ridge=factor.ridge,
    )
