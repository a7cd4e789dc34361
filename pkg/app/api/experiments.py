from fastapi import APIRouter, HTTPException
import logging

from opentelemetry import trace

from app.core.config import settings
from app.core.errors import CalibrationError, InfeasibleDualError, LabError
from app.experiments.runner import run
from app.schemas.request import ExperimentConfig
from app.schemas.response import ErrorDetail, ErrorResponse, HealthResponse, RunReport

logger = logging.getLogger(__name__)

router = APIRouter()


def _status_for(error: LabError) -> int:
    if isinstance(error, InfeasibleDualError):
        return 409
    if isinstance(error, CalibrationError):
        return 500
    return 400


@router.post(
    "/run",
    response_model=RunReport,
    responses={
        400: {"model": ErrorResponse, "description": "Parameters outside a function domain"},
        409: {"model": ErrorResponse, "description": "Dual control infeasible; details carry the node fraction"},
        500: {"model": ErrorResponse, "description": "Budget multiplier calibration failed"},
    },
)
def run_experiment(config: ExperimentConfig):
    """
    Run one experiment

    Simulates the market, calibrates the requested approximations, builds
    their dual controls and returns the welfare-loss report. Runs in the
    worker threadpool since the work is CPU-bound.
    """
    current_span = trace.get_current_span()
    current_span.set_attribute("experiment.approximation", config.approximation)
    current_span.set_attribute("experiment.n_paths", config.n_paths)
    current_span.set_attribute("experiment.seed", config.seed)

    logger.info("Run request received", extra={
        "approximation": config.approximation,
        "n_paths": config.n_paths,
        "seed": config.seed,
    })
    try:
        return run(config)
    except LabError as e:
        detail = ErrorDetail(
            error=type(e).__name__,
            message=str(e),
            details={"fraction": e.fraction} if isinstance(e, InfeasibleDualError) else None,
        )
        logger.warning("Run request failed", extra={"error_type": type(e).__name__})
        raise HTTPException(status_code=_status_for(e), detail=detail.model_dump())


@router.get("/health", response_model=HealthResponse)
async def health():
    """Health check endpoint"""
    components = {
        "api": "healthy",
        "simulation": "healthy",
        "telemetry_export": "enabled" if settings.otel_enabled else "disabled",
    }
    return HealthResponse(
        status="healthy",
        components=components,
        version=settings.app_version
    )


@router.get("/config/defaults", response_model=ExperimentConfig)
async def config_defaults():
    """Baseline experiment configuration"""
    return ExperimentConfig()
