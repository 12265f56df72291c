"""Imputation API router: FEM / GMM imputation and synthetic data on request.

Engine errors propagate to the application-level handler, which maps
validation failures to 422 and numerical failures to 500.
"""

import numpy as np
from fastapi import APIRouter, HTTPException, status
from pydantic import ValidationError

from app.api.impute.schemas import ImputeRequest, ImputeResponse, SynthRequest, SynthResponse
from app.config.logger import app_logger
from app.models.dataset import MaskedDataset
from app.models.mixture import FitConfig, InitPlan
from app.models.synthetic import MissingnessSpec, SyntheticSpec
from app.services.evalbench import STREAM_DATA, STREAM_MISSING, derive_seed
from app.services.init_select import fit_with_init, select_k
from app.services.synthgen import build_masked
from app.utils.errors import DimensionMismatch
from app.utils.responses import SuccessResponse, success_response

router = APIRouter(prefix="/v1", tags=["impute"])


def _dataset_from_rows(rows) -> MaskedDataset:
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise DimensionMismatch("rows must share one length", detail=f"got lengths {sorted(widths)}")
    values = np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=np.float64)
    return MaskedDataset.from_nan(values)


@router.post("/impute", response_model=SuccessResponse[ImputeResponse])
def impute(request: ImputeRequest):
    """Fit a mixture on the posted rows and return them with missing cells imputed.

    With ``k_range`` the number of components is chosen by BIC.
    """
    data = _dataset_from_rows(request.rows)
    app_logger.info(
        f"Impute request: {data.n_samples}x{data.n_features}, {data.n_missing} missing, method={request.method}"
    )
    cfg = FitConfig(
        outer_tol=request.outer_tol,
        max_outer_iters=request.max_outer_iters,
        inner_tol=request.inner_tol,
        max_inner_iters=request.max_inner_iters,
        seed=request.seed,
    )
    plan = InitPlan(seed=request.seed)
    bic_table = None
    if request.k_range is not None:
        low, high = request.k_range
        selection = select_k(data, range(low, high + 1), request.method, cfg, plan)
        outcome = selection.best_fit
        bic_table = selection.table
    else:
        outcome = fit_with_init(request.method, data, request.k, cfg, plan)

    response_data = ImputeResponse(
        imputed=outcome.imputed.tolist(),
        method=request.method,
        n_components=outcome.model.n_components,
        iterations=outcome.report.iterations,
        converged=outcome.report.converged,
        pseudo_loglik_trace=[float(v) for v in outcome.report.pseudo_loglik_trace],
        labels=[int(z) for z in outcome.report.labels],
        bic_table=bic_table,
    )
    return success_response(data=response_data, message="Imputation completed successfully")


@router.post("/synth", response_model=SuccessResponse[SynthResponse])
def synth(request: SynthRequest):
    """Generate a synthetic mixture dataset, optionally with MCAR missing cells."""
    try:
        spec = SyntheticSpec(
            N=request.N, m=request.m, K=request.K, family=request.family, nu=request.nu,
            seed=derive_seed(request.seed, STREAM_DATA),
        )
    except ValidationError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))

    missing = None
    if request.missing_rate > 0:
        missing_seed = derive_seed(request.seed, STREAM_MISSING)
        missing = MissingnessSpec(mechanism="mcar", rate=request.missing_rate, seed=missing_seed)
    truth, labels, _, masked = build_masked(spec, missing)
    data = np.where(masked.mask, truth, np.nan)
    response_data = SynthResponse(
        data=[[None if np.isnan(v) else float(v) for v in row] for row in data],
        labels=[int(z) for z in labels],
        mask=masked.mask.tolist(),
    )
    return success_response(data=response_data, message="Synthetic dataset generated")
