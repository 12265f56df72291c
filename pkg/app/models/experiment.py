"""Monte-Carlo experiment grid, per-run records and aggregate report."""

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from app.models.mixture import FitConfig
from app.models.synthetic import SyntheticSpec

# Slack for MAE <= RMSE under rounding.
JENSEN_SLACK = 1e-12


class MetricSet(BaseModel):
    """Imputation errors over the masked cells of one run."""

    mape: float = Field(ge=0, description="Mean absolute percentage error, percent")
    mae: float = Field(ge=0)
    rmse: float = Field(ge=0)
    n_missing_cells: int = Field(ge=1)
    clean_mape: Optional[float] = Field(default=None, ge=0, description="MAPE over rows without outliers")
    n_clean_missing_cells: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _mae_bounded_by_rmse(self) -> "MetricSet":
        if self.mae > self.rmse * (1.0 + JENSEN_SLACK) + JENSEN_SLACK:
            raise ValueError(f"MAE {self.mae} exceeds RMSE {self.rmse}")
        return self


class RunRecord(BaseModel):
    """One (grid point, replicate, method) run."""

    condition: int = Field(ge=0, description="Index of the (missing rate, outlier rate) grid point")
    replicate: int = Field(ge=0)
    seed: int
    method: str
    missing_rate: float
    outlier_rate: float
    metrics: Optional[MetricSet] = None
    iterations: Optional[int] = None
    converged: Optional[bool] = None
    wall_time_s: float = 0.0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.metrics is not None


class ConditionAggregate(BaseModel):
    """Median and quartiles of each metric over the completed runs of a condition."""

    method: str
    missing_rate: float
    outlier_rate: float
    n_runs: int
    n_failed: int
    quartiles: Dict[str, List[Optional[float]]] = Field(
        description="metric name -> [first quartile, median, third quartile]"
    )


class ExperimentGrid(BaseModel):
    """Missing rates x outlier rates x methods, replicated ``mc_runs`` times."""

    missing_rates: List[float] = Field(default_factory=lambda: [0.3], min_length=1)
    outlier_rates: List[float] = Field(default_factory=lambda: [0.0], min_length=1)
    methods: List[Literal["fem", "gmm"]] = Field(default_factory=lambda: ["fem", "gmm"], min_length=1)
    mc_runs: int = Field(default=1, ge=1)
    base_seed: int = Field(default=0, ge=0, lt=2**63)
    k: int = Field(default=3, ge=1, description="Components fitted by every method")
    missing_mode: Literal["mcar", "block"] = "mcar"
    outlier_kind: Literal["uniform_minmax", "gaussian_feature_noise"] = "uniform_minmax"
    block_row_rate: float = Field(default=0.5, ge=0, lt=1, description="Row fraction per affected group (block mode)")
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)
    fit: FitConfig = Field(default_factory=FitConfig)
    parallelism: int = Field(default=1, ge=1)

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _rates_in_range(self) -> "ExperimentGrid":
        for rate in [*self.missing_rates, *self.outlier_rates]:
            if not 0 <= rate < 1:
                raise ValueError(f"rates must lie in [0, 1), got {rate}")
        return self


class ExperimentReport(BaseModel):
    runs: List[RunRecord]
    aggregates: List[ConditionAggregate]

    @property
    def n_failed(self) -> int:
        return sum(1 for run in self.runs if not run.ok)
