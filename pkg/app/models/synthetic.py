"""Specifications for synthetic mixtures, missingness injection and outlier contamination."""

from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator


class SyntheticSpec(BaseModel):
    """Equal-weight mixture of AR(1)-structured Gaussian or Student components."""

    N: int = Field(default=2000, ge=1, description="Number of samples")
    m: int = Field(default=10, ge=2, description="Number of features")
    K: int = Field(default=3, ge=1, description="Number of components (equal weights)")
    family: Literal["gaussian", "student"] = "gaussian"
    nu: float = Field(default=5.0, gt=2, description="Degrees of freedom of the Student family")
    seed: int = Field(default=0, ge=0, lt=2**64)

    model_config = {
        "frozen": True,
        "json_schema_extra": {"example": {"N": 2000, "m": 10, "K": 3, "family": "student", "nu": 5, "seed": 1}},
    }

    @model_validator(mode="after")
    def _enough_samples(self) -> "SyntheticSpec":
        if self.N < self.K:
            raise ValueError(f"N ({self.N}) must be at least K ({self.K})")
        return self


class MissingnessSpec(BaseModel):
    """MCAR cells or block (all columns of a group) missingness."""

    mechanism: Literal["mcar", "block"] = "mcar"
    rate: float = Field(default=0.0, ge=0, lt=1, description="MCAR cell probability")
    column_groups: Optional[List[List[int]]] = Field(
        default=None, description="Column groups for block missingness (default: one group per column)"
    )
    image_rate: float = Field(default=0.0, ge=0, lt=1, description="Fraction of groups affected")
    row_rate: float = Field(default=0.0, ge=0, lt=1, description="Fraction of rows losing an affected group")
    protected_columns: List[int] = Field(default_factory=list, description="Columns that are never masked")
    min_observed: int = Field(default=3, ge=1)
    max_redraws: int = Field(default=100, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    model_config = {"frozen": True}


class ContaminationSpec(BaseModel):
    """Whole-row replacement by uniform or Gaussian outliers."""

    kind: Literal["uniform_minmax", "gaussian_feature_noise"] = "uniform_minmax"
    rate: float = Field(default=0.0, ge=0, lt=1, description="Fraction of rows replaced")
    seed: int = Field(default=0, ge=0, lt=2**64)

    model_config = {"frozen": True}
