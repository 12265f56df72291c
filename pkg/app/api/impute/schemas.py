"""Request and response schemas for the imputation and synthetic-data endpoints."""

from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

from app.config.settings import settings


class ImputeRequest(BaseModel):
    """Request schema for POST /v1/impute."""

    rows: List[List[Optional[float]]] = Field(
        ...,
        min_length=2,
        max_length=settings.MAX_REQUEST_ROWS,
        description="Data rows; null marks a missing cell.",
    )
    method: Literal["fem", "gmm"] = Field(default="fem", description="Mixture family used for imputation.")
    k: int = Field(default=3, ge=1, description="Number of components (ignored when k_range is given).")
    k_range: Optional[Tuple[int, int]] = Field(
        default=None, description="Inclusive K range for BIC selection, e.g. [1, 6]."
    )
    seed: int = Field(default=0, ge=0, lt=2**63, description="Seed for the K-means initialization.")
    outer_tol: float = Field(default=settings.DEFAULT_OUTER_TOL, gt=0)
    max_outer_iters: int = Field(default=settings.DEFAULT_MAX_OUTER_ITERS, ge=1)
    inner_tol: float = Field(default=settings.DEFAULT_INNER_TOL, gt=0)
    max_inner_iters: int = Field(default=settings.DEFAULT_MAX_INNER_ITERS, ge=1)

    model_config = {
        "json_schema_extra": {
            "example": {
                "rows": [[1.0, 2.0, 3.0, None], [1.1, 2.1, 2.9, 4.2], [0.9, 1.8, 3.2, 3.9], [5.0, 6.1, 7.2, 8.1]],
                "method": "fem",
                "k": 1,
                "seed": 7,
            }
        }
    }


class ImputeResponse(BaseModel):
    """Imputed rows with fit diagnostics."""

    imputed: List[List[float]] = Field(..., description="Rows with every missing cell filled.")
    method: str
    n_components: int
    iterations: int
    converged: bool
    pseudo_loglik_trace: List[float]
    labels: List[int] = Field(..., description="Most responsible component of each row.")
    bic_table: Optional[List[Dict[str, Any]]] = Field(
        default=None, description="Per-K BIC table when k_range was given."
    )


class SynthRequest(BaseModel):
    """Request schema for POST /v1/synth."""

    N: int = Field(default=500, ge=1, le=settings.MAX_REQUEST_ROWS)
    m: int = Field(default=10, ge=2)
    K: int = Field(default=3, ge=1)
    family: Literal["gaussian", "student"] = "gaussian"
    nu: float = Field(default=5.0, gt=2)
    seed: int = Field(default=0, ge=0, lt=2**63)
    missing_rate: float = Field(default=0.0, ge=0, lt=1, description="MCAR rate applied after generation.")

    model_config = {
        "json_schema_extra": {"example": {"N": 200, "m": 10, "K": 3, "family": "student", "seed": 1, "missing_rate": 0.3}}
    }


class SynthResponse(BaseModel):
    """Generated data (null for masked cells), class labels and observed mask."""

    data: List[List[Optional[float]]]
    labels: List[int]
    mask: List[List[bool]]
