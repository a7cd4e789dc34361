from enum import Enum
from typing import Callable, Optional, Tuple, Union
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.optimize import bisect

from app.approx.bbl import BBLApproximation
from app.approx.dual import DualExpansion
from app.core.config import settings
from app.core.errors import CalibrationError
from app.core.metrics import record_calibration
from app.core.tracing import traced_component
from app.habit.level import ratio_and_level
from app.market.spd import PathBatch, spd_moment, time_integral
from app.schemas.params import MarketParams, ModelParams

logger = logging.getLogger(__name__)

MAX_DOUBLINGS = 200
XTOL = 1e-11

Approximation = Union[BBLApproximation, DualExpansion]


class ApproxKind(str, Enum):
    BBL = "bbl"
    DUAL = "dual"


class CalibratedApproximation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: ApproxKind
    approximation: Approximation
    batch: PathBatch  # log_chat and log_h filled
    iterations: int
    residual: float

    @property
    def eta(self) -> float:
        return self.approximation.eta

    @property
    def spend(self) -> np.ndarray:
        """Per-path int_0^T M c' dt; its sample mean is pinned to X0 by the calibration"""
        return time_integral(np.exp(self.batch.log_m + self.batch.log_c), self.batch.grid)


def make_approximation(kind: ApproxKind, eta: float, model: ModelParams, market: MarketParams,
                       n_nodes: Optional[int] = None) -> Approximation:
    if ApproxKind(kind) == ApproxKind.BBL:
        return BBLApproximation(model=model, market=market, eta=eta)
    return DualExpansion(model=model, market=market, eta=eta, n_nodes=n_nodes or settings.quadrature_nodes)


def spending(log_chat: np.ndarray, batch: PathBatch, model: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
    """Per-path int_0^T M c' dt for the consumption generated by a ratio path; returns (spend, log_h)"""
    log_h, log_c = ratio_and_level(log_chat, model.habit, batch.grid)
    return time_integral(np.exp(batch.log_m + log_c), batch.grid), log_h


def budget(log_chat: np.ndarray, batch: PathBatch, model: ModelParams) -> Tuple[float, np.ndarray]:
    """E[int_0^T M c' dt] for the consumption generated by a ratio path; returns (budget, log_h)"""
    spend, log_h = spending(log_chat, batch, model)
    return float(np.mean(spend)), log_h


def solve_budget(cost: Callable[[float], float], x0: float, log_eta0: float, label: str = "eta") -> Tuple[float, int]:
    """Root of log cost(log eta) = log x0 for a cost that decreases in eta.

    Brackets by doubling eta (or halving it) from the initial guess, then bisects
    in log eta. Returns (log eta, function evaluations).
    """
    target = np.log(x0)
    calls = 0

    def f(log_eta: float) -> float:
        nonlocal calls
        calls += 1
        value = cost(log_eta)
        if not np.isfinite(value) or value <= 0.0:
            raise CalibrationError(f"budget is not finite and positive at log {label}={log_eta:.6g}")
        return np.log(value) - target

    f0 = f(log_eta0)
    if f0 == 0.0:
        return log_eta0, calls
    step = np.log(2.0) if f0 > 0.0 else -np.log(2.0)
    lo, hi = log_eta0, log_eta0
    for _ in range(MAX_DOUBLINGS):
        hi = hi + step
        f_hi = f(hi)
        if np.sign(f_hi) != np.sign(f0):
            break
        lo = hi
    else:
        raise CalibrationError(f"could not bracket {label} after {MAX_DOUBLINGS} doublings")

    root, result = bisect(f, min(lo, hi), max(lo, hi), xtol=XTOL, full_output=True, disp=False)
    if not result.converged:
        raise CalibrationError(f"bisection for {label} did not converge: {result.flag}")
    return float(root), calls


def no_habit_eta(x0: float, batch: PathBatch, model: ModelParams) -> float:
    """Sample closed form of eta for c' = (eta e^{delta t} M_t)^{-1/gamma}"""
    pref = model.preferences
    q = 1.0 - 1.0 / pref.gamma
    s = np.mean(time_integral(np.exp(-pref.delta * batch.times / pref.gamma + q * batch.log_m), batch.grid))
    return float((s / x0) ** pref.gamma)


def no_habit_eta_exact(x0: float, model: ModelParams, market: MarketParams, n_nodes: int = 64) -> float:
    """Population closed form using E[M_t^q] = spd_moment(q, t)"""
    pref = model.preferences
    q = 1.0 - 1.0 / pref.gamma
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    t = 0.5 * model.horizon * (x + 1.0)
    s = 0.5 * model.horizon * np.sum(w * np.exp(-pref.delta * t / pref.gamma) * spd_moment(q, t, market))
    return float((s / x0) ** pref.gamma)


@traced_component("approx")
def calibrate_eta(kind: ApproxKind, x0: float, batch: PathBatch, model: ModelParams, market: MarketParams,
                  n_nodes: Optional[int] = None) -> CalibratedApproximation:
    kind = ApproxKind(kind)
    times = batch.times

    def cost(log_eta: float) -> float:
        eta = float(np.exp(log_eta))
        if not 0.0 < eta < np.inf:
            raise CalibrationError(f"{kind.value} eta leaves the floating-point range at log eta={log_eta:.6g}")
        approx = make_approximation(kind, eta, model, market, n_nodes)
        return budget(approx.log_ratio(times, batch.log_m, batch.a_int), batch, model)[0]

    log_eta, calls = solve_budget(cost, x0, np.log(no_habit_eta(x0, batch, model)), label=f"{kind.value} eta")
    approx = make_approximation(kind, float(np.exp(log_eta)), model, market, n_nodes)
    log_chat = approx.log_ratio(times, batch.log_m, batch.a_int)
    spent, log_h = budget(log_chat, batch, model)
    residual = (spent - x0) / x0

    record_calibration(kind.value, calls)
    logger.info("Budget multiplier calibrated", extra={
        "approximation": kind.value,
        "eta": approx.eta,
        "evaluations": calls,
        "residual": residual,
    })
    return CalibratedApproximation(
        kind=kind,
        approximation=approx,
        batch=batch.with_consumption(log_chat, log_h),
        iterations=calls,
        residual=residual,
    )
