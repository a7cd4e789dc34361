from typing import Sequence, Tuple
import logging

import numpy as np
from scipy.optimize import bisect

from app.approx.dual import DualExpansion
from app.core.errors import InvalidParameterError
from app.core.tracing import traced_component
from app.duality.controls import DualControls
from app.market.spd import PathBatch, time_integral
from app.preferences.utility import conjugate_v1, conjugate_v2, utility
from app.schemas.params import MarketParams, ModelParams
from app.schemas.response import CandidateBound

logger = logging.getLogger(__name__)

PINNED_RCOND = 1e-8


def mean_and_se(samples: np.ndarray) -> Tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(samples)), se


def primal_integrals(batch: PathBatch, model: ModelParams) -> np.ndarray:
    """Per-path int_0^T U(t, chat_t) dt"""
    if batch.log_chat is None:
        raise InvalidParameterError("path batch carries no ratio consumption")
    chat = np.exp(batch.log_chat)
    return time_integral(utility(batch.times, chat, model.preferences), batch.grid)


def primal_value(batch: PathBatch, model: ModelParams) -> Tuple[float, float]:
    return mean_and_se(primal_integrals(batch, model))


def dual_integrals(controls: DualControls, x0: float, batch: PathBatch, model: ModelParams) -> np.ndarray:
    """Per-path int_0^T {-V1(t, psi) - eta' M V2(arg)} dt + eta' X0"""
    pref = model.preferences
    integrand = -conjugate_v1(batch.times, controls.psi, pref) \
        - controls.eta_prime * np.exp(batch.log_m) * conjugate_v2(controls.v2_argument)
    return time_integral(integrand, batch.grid) + controls.eta_prime * x0


@traced_component("duality")
def dual_value(controls: DualControls, x0: float, batch: PathBatch, model: ModelParams) -> Tuple[float, float]:
    value, se = mean_and_se(dual_integrals(controls, x0, batch, model))
    logger.info("Dual value evaluated", extra={
        "approximation": controls.kind.value,
        "V": value,
        "se_V": se,
    })
    return value, se


def duality_gap(J: float, V: float) -> float:
    return V - J


def paired_gap_se(primal: np.ndarray, dual: np.ndarray, pinned: Sequence[np.ndarray] = ()) -> float:
    """Standard error of V - J from per-path differences on common paths.

    ``pinned`` holds per-path budgets whose sample mean a calibration on the same
    paths fixed at X0. They enter as control variates and the part of the
    difference they explain is regressed out before the spread is taken.
    """
    diff = np.asarray(dual, dtype=float) - np.asarray(primal, dtype=float)
    n = diff.size
    if not pinned:
        return mean_and_se(diff)[1]
    columns = [np.ones(n)]
    for b in pinned:
        b = np.asarray(b, dtype=float)
        spread = np.std(b)
        if spread > 0.0:
            columns.append((b - b.mean()) / spread)
    design = np.column_stack(columns)
    # near-duplicate budgets (same calibration reached twice) count once
    coef, _, rank, _ = np.linalg.lstsq(design, diff, rcond=PINNED_RCOND)
    dof = n - rank
    if dof < 1:
        return mean_and_se(diff)[1]
    resid = diff - design @ coef
    return float(np.sqrt(np.sum(resid * resid) / dof / n))


def welfare_loss(D: float, eta_prime: float, x0: float) -> float:
    """Fraction C of X0 solving J = V(X0 (1 - C)); V is affine in X0 with slope eta'"""
    if not eta_prime > 0.0:
        raise InvalidParameterError(f"eta' must be positive, got {eta_prime}")
    if not x0 > 0.0:
        raise InvalidParameterError(f"X0 must be positive, got {x0}")
    return D / (eta_prime * x0)


def welfare_loss_by_root(J: float, V: float, eta_prime: float, x0: float, xtol: float = 1e-14) -> float:
    """Bisection root of J = V - eta' X0 + eta' X0 (1 - C)"""
    if not eta_prime > 0.0:
        raise InvalidParameterError(f"eta' must be positive, got {eta_prime}")

    def residual(c: float) -> float:
        return V - eta_prime * x0 + eta_prime * x0 * (1.0 - c) - J

    lo, hi = -1.0, 1.0
    while residual(lo) < 0.0:
        lo *= 2.0
    while residual(hi) > 0.0:
        hi *= 2.0
    return float(bisect(residual, lo, hi, xtol=xtol))


def select_smallest_bound(candidates: Sequence[CandidateBound]) -> CandidateBound:
    if not candidates:
        raise InvalidParameterError("no candidate bounds to select from")
    return min(candidates, key=lambda c: c.V)


def merton_value(eta: float, model: ModelParams, market: MarketParams) -> float:
    """Closed-form E[int_0^T U(t, chat) dt] for the no-habit ratio (eta e^{delta t} M_t)^{-1/gamma}"""
    q = 1.0 - 1.0 / model.preferences.gamma
    f0 = float(DualExpansion(model=model, market=market, eta=eta).F(0.0))
    return eta ** q * f0 / (1.0 - model.preferences.gamma)
