"""
Synthetic benchmark data.

- AR(1) Toeplitz scatter matrices and elliptical sampling through the
  stochastic representation mu + A z
- Three-component mixtures scaled so the dataset minimum is 1 and its 98th
  percentile is 100
- MCAR and block missingness with a minimum number of observed cells per row
- Whole-row outlier contamination (uniform on the feature ranges or Gaussian
  feature noise)

Every generator takes an integer seed (or a numpy Generator) and is
bit-reproducible.
"""

from __future__ import annotations

import math
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import scipy.linalg as la

from app.config.logger import app_logger
from app.models.dataset import MaskedDataset
from app.models.synthetic import ContaminationSpec, MissingnessSpec, SyntheticSpec
from app.utils.errors import DimensionMismatch, InfeasibleMask

SeedLike = Union[int, np.random.Generator]

# Ranges of the per-component AR(1) parameters.
MEAN_RANGE = (0.0, 1.0)
PHI_RANGE = (0.1, 0.9)
SIGMA2_RANGE = (0.0005, 0.005)

SCALE_MIN = 1.0
SCALE_TOP = 100.0
SCALE_PERCENTILE = 98.0


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def ar1_covariance(phi: float, sigma2: float, m: int) -> np.ndarray:
    """Stationary AR(1) covariance sigma2 / (1 - phi^2) * phi^|i-j|."""
    if not 0 < phi < 1 or sigma2 <= 0 or m < 1:
        raise DimensionMismatch("need 0 < phi < 1, sigma2 > 0 and m >= 1", detail=f"phi={phi}, sigma2={sigma2}, m={m}")
    lags = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
    return sigma2 / (1.0 - phi**2) * phi**lags


def sample_elliptical(
    mu: np.ndarray,
    sigma: np.ndarray,
    radial: Literal["gaussian", "student"],
    n: int,
    seed: SeedLike,
    nu: float = 5.0,
) -> np.ndarray:
    """n draws of mu + A z with A A^T = sigma.

    ``z`` is standard normal, or standard normal divided by sqrt(chi2_nu / nu)
    for the Student family.
    """
    rng = _rng(seed)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    root = la.cholesky(np.asarray(sigma, dtype=np.float64), lower=True)
    z = rng.standard_normal((n, mu.shape[0]))
    if radial == "student":
        z = z / np.sqrt(rng.chisquare(nu, size=n) / nu)[:, None]
    elif radial != "gaussian":
        raise DimensionMismatch(f"unknown radial family '{radial}'")
    return mu[None, :] + z @ root.T


def scale_to_reference(data: np.ndarray) -> np.ndarray:
    """Global affine map sending the minimum to 1 and the 98th percentile to 100."""
    data = np.asarray(data, dtype=np.float64)
    low = float(data.min())
    top = float(np.percentile(data, SCALE_PERCENTILE))
    if top <= low:
        raise DimensionMismatch("dataset is constant up to its 98th percentile")
    return SCALE_MIN + (data - low) * ((SCALE_TOP - SCALE_MIN) / (top - low))


def scale_features_1_100(data: np.ndarray) -> np.ndarray:
    """Per-column affine map onto [1, 100]; constant columns become 1."""
    data = np.asarray(data, dtype=np.float64)
    low = data.min(axis=0)
    span = data.max(axis=0) - low
    safe = np.where(span > 0, span, 1.0)
    return SCALE_MIN + (data - low) * ((SCALE_TOP - SCALE_MIN) / safe)


def generate_dataset(spec: SyntheticSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Draw an equal-weight K-component mixture and scale it to the reference range."""
    rng = np.random.default_rng(spec.seed)
    means = rng.uniform(*MEAN_RANGE, size=(spec.K, spec.m))
    phis = rng.uniform(*PHI_RANGE, size=spec.K)
    sigma2s = rng.uniform(*SIGMA2_RANGE, size=spec.K)
    labels = rng.integers(0, spec.K, size=spec.N)

    data = np.empty((spec.N, spec.m))
    for k in range(spec.K):
        rows = np.flatnonzero(labels == k)
        if rows.size == 0:
            continue
        sigma = ar1_covariance(float(phis[k]), float(sigma2s[k]), spec.m)
        data[rows] = sample_elliptical(means[k], sigma, spec.family, rows.size, rng, nu=spec.nu)

    app_logger.debug(
        f"Generated {spec.family} mixture N={spec.N}, m={spec.m}, K={spec.K}, "
        f"class sizes={np.bincount(labels, minlength=spec.K).tolist()}"
    )
    return scale_to_reference(data), labels


def _violations(mask: np.ndarray, min_observed: int) -> np.ndarray:
    counts = mask.sum(axis=1)
    return np.flatnonzero((counts < mask.shape[1]) & (counts < min_observed))


def _mcar_mask(shape: Tuple[int, int], spec: MissingnessSpec, allowed: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mask = ~((rng.random(shape) < spec.rate) & allowed[None, :])
    for _ in range(spec.max_redraws):
        bad = _violations(mask, spec.min_observed)
        if bad.size == 0:
            break
        mask[bad] = ~((rng.random((bad.size, shape[1])) < spec.rate) & allowed[None, :])
    return mask


def _block_mask(
    shape: Tuple[int, int], spec: MissingnessSpec, allowed: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    n, m = shape
    groups: List[List[int]] = spec.column_groups or [[j] for j in range(m)]
    flat = [c for group in groups for c in group]
    if any(c < 0 or c >= m for c in flat):
        raise DimensionMismatch("column group index out of range", detail=f"m={m}, groups={groups}")
    n_groups = int(math.floor(spec.image_rate * len(groups) + 1e-9))
    n_rows = int(math.floor(spec.row_rate * n + 1e-9))
    columns = [np.asarray([c for c in group if allowed[c]], dtype=np.intp) for group in groups]

    mask = np.ones(shape, dtype=bool)
    for _ in range(spec.max_redraws + 1):
        mask = np.ones(shape, dtype=bool)
        for g in rng.choice(len(groups), size=n_groups, replace=False):
            rows = rng.choice(n, size=n_rows, replace=False)
            mask[np.ix_(rows, columns[g])] = False
        if _violations(mask, spec.min_observed).size == 0:
            break
    return mask


def inject_missing(data: np.ndarray, spec: MissingnessSpec) -> MaskedDataset:
    """Mask cells of a complete matrix; values are never altered."""
    values = np.asarray(data, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionMismatch("data must be an N x m matrix", detail=f"got {values.shape}")
    n, m = values.shape
    allowed = np.ones(m, dtype=bool)
    protected = [c for c in spec.protected_columns if 0 <= c < m]
    allowed[protected] = False
    rng = np.random.default_rng(spec.seed)

    if spec.mechanism == "mcar":
        mask = _mcar_mask((n, m), spec, allowed, rng)
    else:
        mask = _block_mask((n, m), spec, allowed, rng)

    bad = _violations(mask, spec.min_observed)
    if bad.size:
        raise InfeasibleMask(
            f"could not keep {spec.min_observed} observed cells per row after {spec.max_redraws} redraws",
            detail=f"{bad.size} rows still violate the constraint",
        )
    return MaskedDataset(values=values, mask=mask)


def contaminate(data: np.ndarray, spec: ContaminationSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Replace a seeded set of round(rate * N) rows by outliers."""
    values = np.array(data, dtype=np.float64, copy=True)
    n, m = values.shape
    flags = np.zeros(n, dtype=bool)
    n_out = int(round(spec.rate * n))
    if n_out == 0:
        return values, flags

    rng = np.random.default_rng(spec.seed)
    rows = np.sort(rng.choice(n, size=n_out, replace=False))
    if spec.kind == "uniform_minmax":
        low, high = values.min(axis=0), values.max(axis=0)
        replacement = rng.uniform(low, high, size=(n_out, m))
    else:
        replacement = rng.normal(values.mean(axis=0), np.sqrt(values.var(axis=0)), size=(n_out, m))
    values[rows] = replacement
    flags[rows] = True
    return values, flags


def build_masked(
    spec: SyntheticSpec,
    missing: Optional[MissingnessSpec] = None,
    contamination: Optional[ContaminationSpec] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, MaskedDataset]:
    """Generate, contaminate, then mask.

    Returns ``(truth, labels, outlier_flags, masked)`` where ``truth`` holds the
    post-contamination values.
    """
    truth, labels = generate_dataset(spec)
    flags = np.zeros(spec.N, dtype=bool)
    if contamination is not None and contamination.rate > 0:
        truth, flags = contaminate(truth, contamination)
    masked = inject_missing(truth, missing) if missing is not None else MaskedDataset.complete(truth)
    return truth, labels, flags, masked
