"""
CSV and model-JSON persistence.

CSV: comma separated, optional header row (detected when the first row holds
a non-numeric token), missing cells written as empty fields or ``NaN`` in any
case. Observed tokens are kept verbatim so an imputed file reproduces every
observed field byte for byte.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.config.logger import app_logger
from app.models.dataset import MaskedDataset
from app.models.mixture import GaussianMixtureModel, MixtureModel, model_from_dict
from app.utils.errors import DatasetFormatError

PathLike = Union[str, Path]
Model = Union[MixtureModel, GaussianMixtureModel]


@dataclass(frozen=True)
class CsvTable:
    """Parsed CSV: the masked dataset, the raw cell tokens and the header if any."""

    dataset: MaskedDataset
    tokens: np.ndarray
    header: Optional[Tuple[str, ...]] = None


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _is_missing(token: str) -> bool:
    stripped = token.strip()
    return stripped == "" or stripped.lower() == "nan"


def _check_field_counts(path: Path) -> None:
    """Every non-blank line must hold as many fields as the first one."""
    expected: Optional[int] = None
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            for row in reader:
                if not row:
                    continue
                if expected is None:
                    expected = len(row)
                elif len(row) != expected:
                    raise DatasetFormatError(
                        f"line {reader.line_num} of {path} has {len(row)} fields, expected {expected}"
                    )
    except (UnicodeDecodeError, csv.Error) as exc:
        raise DatasetFormatError(f"malformed CSV: {path}", detail=str(exc)) from exc


def format_value(value: float) -> str:
    """Shortest round-trip representation of a float."""
    return repr(float(value))


def read_dataset(path: PathLike) -> CsvTable:
    """Parse a numeric CSV into a MaskedDataset, keeping the original tokens."""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f"input file not found: {path}")
    _check_field_counts(path)
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.EmptyDataError as exc:
        raise DatasetFormatError(f"input file is empty: {path}") from exc
    except pd.errors.ParserError as exc:
        raise DatasetFormatError(f"malformed CSV: {path}", detail=str(exc)) from exc

    tokens = frame.to_numpy(dtype=object).astype(str)

    header: Optional[Tuple[str, ...]] = None
    first = tokens[0]
    if any(not _is_missing(t) and not _is_number(t.strip()) for t in first):
        header = tuple(t.strip() for t in first)
        tokens = tokens[1:]
    if tokens.shape[0] == 0:
        raise DatasetFormatError(f"no data rows in {path}")

    n, m = tokens.shape
    values = np.full((n, m), np.nan)
    mask = np.zeros((n, m), dtype=bool)
    for i in range(n):
        for j in range(m):
            token = tokens[i, j]
            if _is_missing(token):
                continue
            try:
                values[i, j] = float(token.strip())
            except ValueError as exc:
                line = i + 1 + (header is not None)
                raise DatasetFormatError(
                    f"non-numeric cell at line {line}, column {j + 1} of {path}", detail=repr(token)
                ) from exc
            mask[i, j] = True

    app_logger.debug(f"Read {n} x {m} dataset from {path} ({int((~mask).sum())} missing cells)")
    return CsvTable(dataset=MaskedDataset(values=values, mask=mask, feature_names=header), tokens=tokens, header=header)


def _write_tokens(path: PathLike, tokens: np.ndarray, header: Optional[Sequence[str]]) -> None:
    frame = pd.DataFrame(tokens)
    frame.to_csv(Path(path), header=list(header) if header is not None else False, index=False, lineterminator="\n")


def write_imputed(path: PathLike, table: CsvTable, imputed: np.ndarray) -> None:
    """Observed tokens pass through; imputed cells are written at full precision."""
    imputed = np.asarray(imputed, dtype=np.float64)
    mask = table.dataset.mask
    out = np.array(table.tokens, dtype=object, copy=True)
    for i, j in zip(*np.nonzero(~mask)):
        out[i, j] = format_value(imputed[i, j])
    _write_tokens(path, out, table.header)


def write_matrix(
    path: PathLike,
    values: np.ndarray,
    header: Optional[Sequence[str]] = None,
    mask: Optional[np.ndarray] = None,
) -> None:
    """Write a numeric matrix; cells with ``mask`` False are left empty."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty(values.shape, dtype=object)
    for index, value in np.ndenumerate(values):
        out[index] = format_value(value)
    if mask is not None:
        out[~np.asarray(mask, dtype=bool)] = ""
    _write_tokens(path, out, header)


def write_column(path: PathLike, name: str, values: np.ndarray) -> None:
    """Single integer column with a header (labels, 0/1 flags)."""
    frame = pd.DataFrame({name: np.asarray(values).astype(np.int64)})
    frame.to_csv(Path(path), index=False, lineterminator="\n")


def write_int_matrix(path: PathLike, values: np.ndarray, header: Sequence[str]) -> None:
    frame = pd.DataFrame(np.asarray(values).astype(np.int64), columns=list(header))
    frame.to_csv(Path(path), index=False, lineterminator="\n")


def write_json(path: PathLike, payload: Dict[str, object]) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def save_model(path: PathLike, model: Model, method: str) -> None:
    """Model JSON: method tag, dimensions, weights, means and row-major scatters."""
    payload: Dict[str, object] = {
        "method": method,
        "n_components": model.n_components,
        "n_features": model.n_features,
        **model.to_dict(),
    }
    write_json(path, payload)


def load_model(path: PathLike) -> Tuple[str, Model]:
    """Inverse of ``save_model``; returns ``(method, model)``."""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f"model file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        method = str(payload.get("method", "fem"))
        if method not in ("fem", "gmm"):
            raise DatasetFormatError(f"unknown method '{method}' in {path}")
        model = model_from_dict(payload, gaussian=method == "gmm")
    except DatasetFormatError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
        raise DatasetFormatError(f"invalid model JSON: {path}", detail=str(exc)) from exc
    return method, model
