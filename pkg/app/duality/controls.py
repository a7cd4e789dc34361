"""Dual controls built from a calibrated primal approximation.

For consumption c' generated by the approximation's ratio law, the control is
psi'_t = eta' Psi_t with

    Psi_t = M_t c'_t + beta E[int_t^T e^{-(alpha-beta)(s-t)} M_s c'_s ds | F_t]

and the V2 argument (psi'_t - beta E[int_t^T e^{-alpha(s-t)} psi'_s ds | F_t]) / (eta' M_t)
does not depend on eta'.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, Optional
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.approx.calibration import ApproxKind, CalibratedApproximation, budget, solve_budget, spending
from app.condexp.analytic import RatioLaw, forward_coefficients
from app.condexp.kernels import gauss_legendre
from app.condexp.nested import ContinuationFunctional, FunctionalKind, MarkovState, nested_mc
from app.core.config import settings
from app.core.errors import InfeasibleDualError
from app.core.metrics import record_infeasible_dual
from app.core.tracing import traced_component
from app.market.rng import chunk_ranges
from app.market.spd import PathBatch, time_integral
from app.preferences.utility import conjugate_v2
from app.schemas.params import HabitParams, MarketParams, ModelParams

logger = logging.getLogger(__name__)


class DualControls(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: ApproxKind
    psi: np.ndarray          # eta' * Psi, shape (n_paths, n_steps + 1)
    eta_prime: float
    forward: np.ndarray      # E[int_t^T e^{-alpha(s-t)} Psi_s ds | F_t]
    v2_argument: np.ndarray
    eta_residual: float
    backend: str
    eta_rule: str = "budget"
    # per-path int_0^T M I(psi') h dt at eta'
    spend: Optional[np.ndarray] = None

    @property
    def base(self) -> np.ndarray:
        return self.psi / self.eta_prime


def forward_weight(hp: HabitParams, lag):
    """Weight of E[M_u c'_u | F_t] in E[int_t^T e^{-alpha(s-t)} Psi_s ds | F_t].

    Swapping the integrals gives e^{-alpha L} + e^{-kappa L}(1 - e^{-beta L}) = e^{-kappa L}.
    """
    return np.exp(-hp.kappa * np.asarray(lag, dtype=float))


def _analytic_step(k: int, law: RatioLaw, batch: PathBatch, log_h: np.ndarray,
                   hp: HabitParams, market: MarketParams, n_nodes: int):
    t, horizon = batch.times[k], batch.grid.T
    if k == batch.grid.n_steps:
        zeros = np.zeros(batch.n_paths)
        return zeros, zeros
    s, w = gauss_legendre(t, horizon, n_nodes)
    coeffs = forward_coefficients(law, hp, market, t, s, n_nodes)
    moments = np.exp(coeffs.log_moment(batch.log_m[:, k], batch.a_int[:, k], log_h[:, k]))
    annuity = moments @ (w * np.exp(-hp.kappa * (s - t)))
    forward = moments @ (w * forward_weight(hp, s - t))
    return annuity, forward


def _analytic_terms(law, batch, log_h, hp, market, n_nodes, threads):
    n = batch.grid.n_steps + 1
    annuity = np.empty((batch.n_paths, n))
    forward = np.empty((batch.n_paths, n))

    def fill(lo: int, hi: int) -> None:
        for k in range(lo, hi):
            annuity[:, k], forward[:, k] = _analytic_step(k, law, batch, log_h, hp, market, n_nodes)

    ranges = chunk_ranges(n, threads)
    if len(ranges) == 1:
        fill(0, n)
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            for f in [pool.submit(fill, lo, hi) for lo, hi in ranges]:
                f.result()
    return annuity, forward


def _nested_terms(law, batch, log_h, model, market, inner_paths, seed, threads):
    hp = model.habit
    n = batch.grid.n_steps + 1
    annuity = np.zeros((batch.n_paths, n))
    forward = np.zeros((batch.n_paths, n))
    inner_dt = batch.grid.dt / settings.nested_substeps
    common = dict(horizon=model.horizon, log_ratio=law.log_ratio, habit=hp, inner_dt=inner_dt)
    annuity_fn = ContinuationFunctional(kind=FunctionalKind.CONSUMPTION_ANNUITY, kappa=hp.kappa, **common)
    forward_fn = ContinuationFunctional(kind=FunctionalKind.DUAL_FORWARD, **common)

    def fill(i: int) -> None:
        for k in range(n - 1):
            state = MarkovState(t=batch.times[k], m=float(np.exp(batch.log_m[i, k])),
                                a_int=batch.a_int[i, k], log_h=log_h[i, k])
            # same key for both functionals: common inner paths
            annuity[i, k] = nested_mc(state, annuity_fn, inner_paths, seed, market, i, k)[0]
            forward[i, k] = nested_mc(state, forward_fn, inner_paths, seed, market, i, k)[0]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(batch.n_paths)))
    else:
        for i in range(batch.n_paths):
            fill(i)
    return annuity, forward


def _ratio_from_dual(log_psi: np.ndarray, batch: PathBatch, model: ModelParams) -> np.ndarray:
    """log I(t, psi)"""
    pref = model.preferences
    return (log_psi + pref.delta * batch.times) / (1.0 - pref.gamma)


def minimizing_eta_prime(base: np.ndarray, v2_argument: np.ndarray, x0: float,
                         batch: PathBatch, model: ModelParams) -> float:
    """eta' minimizing the dual value for fixed Psi (closed form, the dual value is convex in eta')"""
    pref = model.preferences
    grid = batch.grid
    v2_part = np.mean(time_integral(np.exp(batch.log_m) * conjugate_v2(v2_argument), grid))
    mass = np.mean(time_integral(base, grid))
    entropy = np.mean(time_integral(base * (np.log(base) + pref.delta * batch.times), grid))
    return float(np.exp(((pref.gamma - 1.0) * (v2_part - x0) - entropy) / mass))


@traced_component("duality")
def build_dual_controls(
    calibrated: CalibratedApproximation,
    x0: float,
    model: ModelParams,
    market: MarketParams,
    backend: Literal["analytic", "nested"] = "analytic",
    eta_rule: Literal["budget", "minimize"] = "budget",
    n_nodes: Optional[int] = None,
    inner_paths: int = 256,
    seed: int = 0,
    threads: int = 1,
) -> DualControls:
    hp = model.habit
    batch = calibrated.batch
    law = calibrated.approximation.ratio_law()

    # primal consumption of the calibrated approximation
    log_h = batch.log_h
    current = np.exp(batch.log_m + batch.log_c)

    if backend == "nested":
        annuity, forward = _nested_terms(law, batch, log_h, model, market, inner_paths, seed, threads)
    else:
        annuity, forward = _analytic_terms(law, batch, log_h, hp, market,
                                           n_nodes or settings.quadrature_nodes, threads)

    base = current + hp.beta * annuity
    v2_argument = (base - hp.beta * forward) / np.exp(batch.log_m)
    bad = ~(v2_argument > 0.0) | ~(base > 0.0) | ~np.isfinite(v2_argument) | ~np.isfinite(base)
    if bad.any():
        fraction = float(bad.mean())
        record_infeasible_dual(calibrated.kind.value)
        raise InfeasibleDualError(
            f"dual control for {calibrated.kind.value} leaves the V2 domain at {fraction:.4%} of nodes",
            fraction=fraction,
        )

    log_base = np.log(base)

    def cost(log_eta: float) -> float:
        return budget(_ratio_from_dual(log_eta + log_base, batch, model), batch, model)[0]

    if eta_rule == "minimize":
        eta_prime = minimizing_eta_prime(base, v2_argument, x0, batch, model)
    else:
        log_eta, _ = solve_budget(cost, x0, np.log(calibrated.eta), label=f"{calibrated.kind.value} eta'")
        eta_prime = float(np.exp(log_eta))
    spend, _ = spending(_ratio_from_dual(np.log(eta_prime) + log_base, batch, model), batch, model)
    residual = (float(np.mean(spend)) - x0) / x0

    logger.info("Dual controls built", extra={
        "approximation": calibrated.kind.value,
        "backend": backend,
        "eta_rule": eta_rule,
        "eta_prime": eta_prime,
        "eta_residual": residual,
    })
    return DualControls(
        kind=calibrated.kind,
        psi=eta_prime * base,
        eta_prime=eta_prime,
        forward=forward,
        v2_argument=v2_argument,
        eta_residual=residual,
        backend=backend,
        eta_rule=eta_rule,
        spend=spend,
    )
