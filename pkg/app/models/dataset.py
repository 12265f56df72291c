"""Masked data matrix, per-row index partitions and scatter-block views."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.utils.errors import AllMissing, DimensionMismatch


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class MaskedDataset:
    """N x m matrix with a per-cell observed mask (True = observed).

    The mask is the single source of truth. Missing cells of ``values`` hold
    NaN and are never read by numeric code.
    """

    values: np.ndarray
    mask: np.ndarray
    feature_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        mask = np.array(self.mask, dtype=bool, copy=True)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DimensionMismatch(
                "values and mask must be 2-D arrays of identical shape",
                detail=f"values={values.shape}, mask={mask.shape}",
            )
        empty_rows = np.flatnonzero(~mask.any(axis=1))
        if empty_rows.size:
            raise AllMissing(
                "every row needs at least one observed entry",
                detail=f"rows without observations: {empty_rows[:20].tolist()}",
            )
        if np.any(~np.isfinite(values[mask])):
            raise DimensionMismatch("observed cells must hold finite values")
        values[~mask] = np.nan
        names = self.feature_names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != values.shape[1]:
                raise DimensionMismatch(
                    "feature_names must have one entry per column",
                    detail=f"{len(names)} names for {values.shape[1]} columns",
                )
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def complete(cls, values: np.ndarray, feature_names: Optional[Tuple[str, ...]] = None) -> "MaskedDataset":
        """Wrap a fully observed matrix."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values=values, mask=np.ones(values.shape, dtype=bool), feature_names=feature_names)

    @classmethod
    def from_nan(cls, values: np.ndarray, feature_names: Optional[Tuple[str, ...]] = None) -> "MaskedDataset":
        """Build a dataset treating NaN cells as missing."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values=values, mask=~np.isnan(values), feature_names=feature_names)

    @property
    def n_samples(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.values.shape[1])

    @property
    def n_missing(self) -> int:
        return int((~self.mask).sum())

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())

    def observed_counts(self) -> np.ndarray:
        """Number of observed cells per row."""
        return self.mask.sum(axis=1)

    def filled(self, fill_value: float = 0.0) -> np.ndarray:
        """Writable copy of ``values`` with missing cells set to ``fill_value``."""
        out = np.array(self.values, copy=True)
        out[~self.mask] = fill_value
        return out

    def with_mask(self, mask: np.ndarray) -> "MaskedDataset":
        """Same values, new mask (cells newly masked become missing)."""
        return MaskedDataset(values=self.filled(), mask=np.asarray(mask, dtype=bool) & self.mask, feature_names=self.feature_names)


@dataclass(frozen=True)
class IndexPartition:
    """Sorted observed / missing column indices of one row."""

    observed: Tuple[int, ...]
    missing: Tuple[int, ...]

    @property
    def d_obs(self) -> int:
        return len(self.observed)

    @property
    def d_mis(self) -> int:
        return len(self.missing)

    @property
    def m(self) -> int:
        return self.d_obs + self.d_mis

    @property
    def observed_index(self) -> np.ndarray:
        return np.asarray(self.observed, dtype=np.intp)

    @property
    def missing_index(self) -> np.ndarray:
        return np.asarray(self.missing, dtype=np.intp)


@dataclass(frozen=True)
class ScatterView:
    """Blocks of a symmetric positive-definite m x m matrix under an IndexPartition."""

    oo: np.ndarray
    om: np.ndarray
    mo: np.ndarray
    mm: np.ndarray
    partition: IndexPartition = field(repr=False)

    def assemble(self) -> np.ndarray:
        """Scatter the blocks back into the parent matrix."""
        m = self.partition.m
        obs = self.partition.observed_index
        mis = self.partition.missing_index
        parent = np.empty((m, m), dtype=np.float64)
        parent[np.ix_(obs, obs)] = self.oo
        parent[np.ix_(obs, mis)] = self.om
        parent[np.ix_(mis, obs)] = self.mo
        parent[np.ix_(mis, mis)] = self.mm
        return parent


def missing_patterns(mask: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Group rows by missingness pattern.

    Returns ``(pattern, rows)`` pairs in a deterministic order (lexicographic
    on the pattern), where ``pattern`` is a boolean observed-mask row.
    """
    mask = np.asarray(mask, dtype=bool)
    patterns, inverse = np.unique(mask, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    order = np.argsort(inverse, kind="stable")
    counts = np.bincount(inverse, minlength=patterns.shape[0])
    groups = np.split(order, np.cumsum(counts)[:-1])
    return [(patterns[g], groups[g]) for g in range(patterns.shape[0])]
