from pydantic import BaseModel, Field
from typing import Any, Dict, List, Optional


class CandidateBound(BaseModel):
    approximation: str = Field(..., description="Approximation whose dual pair produced this bound")
    V: float = Field(..., description="Dual value (upper bound on optimal utility)")
    se_V: float = Field(..., description="Standard error of V")
    eta_prime: float = Field(..., gt=0.0, description="Dual multiplier of the pair")
    eta_residual: float = Field(..., description="Relative budget residual of the multiplier rule")


class WelfareReport(BaseModel):
    approximation: str = Field(..., description="Primal approximation being certified")
    J: float = Field(..., description="Primal value in utils")
    V: float = Field(..., description="Selected dual value in utils")
    D: float = Field(..., description="Duality gap V - J")
    C: float = Field(..., description="Welfare loss as a fraction of X0")
    C_percent: float = Field(..., description="Welfare loss in percent of X0")
    se_J: float = Field(..., ge=0.0)
    se_V: float = Field(..., ge=0.0)
    se_D: float = Field(..., ge=0.0, description="Paired standard error of the gap")
    se_C_percent: float = Field(..., ge=0.0, description="Standard error of C_percent in percentage points")
    eta_star: float = Field(..., gt=0.0, description="Calibrated budget multiplier")
    eta_prime: float = Field(..., gt=0.0, description="Dual multiplier of the selected bound")
    budget_residual: float = Field(..., description="Relative budget residual after calibration")
    bound_source: str = Field(..., description="Approximation whose dual pair gave the smallest V")


class CrossCheckNode(BaseModel):
    approximation: str
    path: int
    step: int
    analytic: float
    nested: float
    se: float
    z: float


class RunReport(BaseModel):
    config: Dict[str, Any] = Field(..., description="Exact configuration used")
    seed: int
    reports: List[WelfareReport]
    candidates: List[CandidateBound]
    refinement: Optional[Dict[str, float]] = Field(
        None, description="Change in C_percent when n_steps is doubled, per approximation"
    )
    crosscheck: Optional[List[CrossCheckNode]] = None
    runtime_seconds: Optional[float] = None


class HealthResponse(BaseModel):
    status: str = Field(default="healthy", description="Service health status")
    components: Dict[str, str] = Field(..., description="Component health checks")
    version: str = Field(default="1.0.0", description="Service version")


class ErrorDetail(BaseModel):
    error: str = Field(..., description="Error type")
    message: str = Field(..., description="Human-readable error message")
    details: Optional[Dict[str, Any]] = Field(None, description="Additional error context")


class ErrorResponse(BaseModel):
    detail: ErrorDetail
