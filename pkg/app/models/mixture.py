"""Mixture parameter sets, responsibilities, fit configuration and fit reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.utils.errors import DimensionMismatch

WEIGHT_TOL = 1e-10


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(float(np.linalg.norm(old)), 1e-12))


class FitConfig(BaseModel):
    """Stopping rules and numerical guards shared by the FEM and GMM fitters."""

    outer_tol: float = Field(default=1e-5, gt=0, description="Relative parameter-change threshold")
    max_outer_iters: int = Field(default=200, ge=1)
    inner_tol: float = Field(default=1e-6, gt=0, description="Fixed-point loop threshold")
    max_inner_iters: int = Field(default=20, ge=1)
    ridge: float = Field(default=0.0, ge=0, description="Diagonal jitter added on factorization failure")
    distance_floor: float = Field(default=1e-12, gt=0, description="Mahalanobis floor for robust weights")
    covariance_reg: float = Field(
        default=1e-6, ge=0, description="Relative covariance regularization of the GMM baseline"
    )
    seed: int = Field(default=0, ge=0, lt=2**64)

    model_config = {"frozen": True}


class InitPlan(BaseModel):
    """Mean fill followed by seeded K-means restarts."""

    fill_strategy: Literal["feature_mean"] = "feature_mean"
    kmeans_restarts: int = Field(default=10, ge=1)
    kmeans_max_iters: int = Field(default=300, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)

    model_config = {"frozen": True}


@dataclass(frozen=True)
class _MixtureParams:
    weights: np.ndarray
    means: np.ndarray
    scatters: np.ndarray

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64, copy=True).reshape(-1)
        means = np.array(self.means, dtype=np.float64, copy=True)
        scatters = np.array(self.scatters, dtype=np.float64, copy=True)
        k = weights.shape[0]
        if means.ndim != 2 or means.shape[0] != k:
            raise DimensionMismatch("means must be a K x m array", detail=f"got {means.shape} for K={k}")
        m = means.shape[1]
        if scatters.shape != (k, m, m):
            raise DimensionMismatch("scatters must be a K x m x m array", detail=f"got {scatters.shape}")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise DimensionMismatch("weights must be positive and sum to one", detail=str(weights.tolist()))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "scatters", _frozen(scatters))

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.means.shape[1])

    def n_parameters(self) -> int:
        """K-1 weights, K means and K symmetric matrices."""
        k, m = self.n_components, self.n_features
        return (k - 1) + k * m + k * m * (m + 1) // 2

    def max_relative_change(self, previous: "_MixtureParams") -> float:
        """Largest relative change of weights, means and scatters against ``previous``."""
        return max(
            _relative_change(self.weights, previous.weights),
            _relative_change(self.means, previous.means),
            _relative_change(self.scatters, previous.scatters),
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "scatters": [s.reshape(-1).tolist() for s in self.scatters],
        }


@dataclass(frozen=True)
class MixtureModel(_MixtureParams):
    """Weights, means and trace-normalized scatter matrices of an elliptical mixture."""

    def scaled(self, factor: float) -> "MixtureModel":
        """Same model with every scatter multiplied by ``factor``."""
        return MixtureModel(self.weights, self.means, self.scatters * factor)


@dataclass(frozen=True)
class GaussianMixtureModel(_MixtureParams):
    """Weights, means and (unnormalized) covariances of a Gaussian mixture."""

    @property
    def covariances(self) -> np.ndarray:
        return self.scatters


@dataclass(frozen=True)
class Responsibilities:
    """N x K posterior membership probabilities."""

    p: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.p, dtype=np.float64, copy=True)
        if p.ndim != 2:
            raise DimensionMismatch("responsibilities must be an N x K array")
        object.__setattr__(self, "p", _frozen(p))

    def labels(self) -> np.ndarray:
        """argmax over components, ties to the smallest index."""
        return np.argmax(self.p, axis=1)


@dataclass(frozen=True)
class ConditionalMoments:
    """Conditional moments of the missing block of one row under one component."""

    cond_mean: np.ndarray
    cond_cov: np.ndarray
    x_tilde: np.ndarray
    sigma_tilde: np.ndarray


@dataclass(frozen=True)
class ConditionalBlock:
    """Rows sharing one missing pattern under one component.

    The conditional covariance of row ``rows[j]`` is ``factors[j] * schur``.
    """

    rows: np.ndarray
    missing_index: np.ndarray
    factors: np.ndarray
    schur: np.ndarray


@dataclass(frozen=True)
class ConditionalBatch:
    """E-step sufficient statistics for a whole dataset.

    ``x_tilde`` is K x N x m; ``blocks[k]`` holds the conditional covariances
    of component k for rows that have missing entries.
    """

    x_tilde: np.ndarray
    blocks: Tuple[Tuple[ConditionalBlock, ...], ...]

    def moments(self, i: int, k: int) -> ConditionalMoments:
        """Per-(row, component) view of the batch."""
        x_tilde = np.array(self.x_tilde[k, i], copy=True)
        m = x_tilde.shape[0]
        sigma_tilde = np.zeros((m, m))
        for block in self.blocks[k]:
            hit = np.flatnonzero(block.rows == i)
            if hit.size:
                mis = block.missing_index
                cond_cov = block.factors[hit[0]] * block.schur
                sigma_tilde[np.ix_(mis, mis)] = cond_cov
                return ConditionalMoments(x_tilde[mis], cond_cov, x_tilde, sigma_tilde)
        return ConditionalMoments(np.empty(0), np.empty((0, 0)), x_tilde, sigma_tilde)


@dataclass
class FitReport:
    """Diagnostics of one fit."""

    method: str
    iterations: int
    converged: bool
    pseudo_loglik_trace: List[float]
    labels: np.ndarray
    responsibilities: Responsibilities
    objective_trace: List[float] = field(default_factory=list)
    ridge_events: int = 0
    elapsed_seconds: float = 0.0

    @property
    def final_loglik(self) -> float:
        return self.pseudo_loglik_trace[-1] if self.pseudo_loglik_trace else float("nan")

    def summary(self) -> Dict[str, object]:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "converged": self.converged,
            "pseudo_loglik_trace": [float(v) for v in self.pseudo_loglik_trace],
            "objective_trace": [float(v) for v in self.objective_trace],
            "ridge_events": self.ridge_events,
        }


def model_from_dict(payload: Dict[str, object], gaussian: bool = False) -> _MixtureParams:
    """Inverse of ``to_dict`` (scatters stored row-major)."""
    weights = np.asarray(payload["weights"], dtype=np.float64)
    means = np.asarray(payload["means"], dtype=np.float64)
    m = means.shape[1] if means.ndim == 2 else 0
    scatters = np.asarray(payload["scatters"], dtype=np.float64).reshape(len(weights), m, m)
    cls = GaussianMixtureModel if gaussian else MixtureModel
    return cls(weights=weights, means=means, scatters=scatters)
