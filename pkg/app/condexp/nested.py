"""Nested Monte Carlo oracle for conditional expectations of path functionals.

Inner paths restart from the Markov state (t, M_t, A_t, log h_t) of an outer
path node. Streams are keyed by (seed, path id, node index) so the estimate at
a node does not depend on which other nodes are evaluated or on threading.
"""
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import cumulative_trapezoid, trapezoid

from app.core.config import settings
from app.core.errors import InvalidParameterError
from app.core.metrics import record_paths_simulated
from app.core.tracing import traced_component
from app.habit.level import decay_recursion
from app.market.rng import INNER_STREAM, path_generator
from app.market.spd import log_spd_increments
from app.schemas.params import HabitParams, MarketParams

logger = logging.getLogger(__name__)

LogPathFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class MarkovState(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    t: float = Field(..., ge=0.0)
    m: float = Field(..., gt=0.0, description="State-price density M_t")
    a_int: float = Field(default=0.0, description="A_t = int_0^t log M_s ds")
    log_h: float = Field(default=0.0, description="Current log habit")


class FunctionalKind(str, Enum):
    SPD_ANNUITY = "spd_annuity"                  # int_t^T e^{-kappa(s-t)} M_s/M_t ds
    THETA_RATIO = "theta_ratio"                  # int_t^T theta_s/theta_t ds
    CONSUMPTION_AT = "consumption_at"            # M_s c'_s
    CONSUMPTION_ANNUITY = "consumption_annuity"  # int_t^T e^{-kappa(s-t)} M_s c'_s ds
    DUAL_FORWARD = "dual_forward"                # int_t^T e^{-alpha(s-t)} psi_s ds per unit eta'


class ContinuationFunctional(BaseModel):
    """Path functional evaluated on inner paths from a node.

    ``log_ratio`` maps (times, log M, A) to log chat for the consumption kinds;
    ``log_theta`` maps the same arguments to log theta for THETA_RATIO.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: FunctionalKind
    horizon: float = Field(..., gt=0.0)
    kappa: float = 0.0
    s: Optional[float] = None
    log_ratio: Optional[LogPathFn] = None
    log_theta: Optional[LogPathFn] = None
    habit: Optional[HabitParams] = None
    inner_dt: Optional[float] = Field(default=None, gt=0.0, description="Inner grid step; defaults to horizon / (40 * nested_substeps)")

    def end_time(self, t: float) -> float:
        if self.kind == FunctionalKind.CONSUMPTION_AT:
            if self.s is None or self.s < t:
                raise InvalidParameterError("CONSUMPTION_AT needs an evaluation time s >= t")
            return self.s
        return self.horizon


def _inner_paths(state: MarkovState, end: float, n_inner: int, n_steps: int,
                 rng: np.random.Generator, params: MarketParams):
    times = np.linspace(state.t, end, n_steps + 1)
    dt = (end - state.t) / n_steps
    dw = rng.standard_normal((n_inner, n_steps)) * np.sqrt(dt)
    log_m = np.empty((n_inner, n_steps + 1))
    log_m[:, 0] = np.log(state.m)
    log_m[:, 1:] = log_m[:, :1] + np.cumsum(log_spd_increments(dw, dt, params), axis=1)
    a_int = state.a_int + cumulative_trapezoid(log_m, dx=dt, axis=1, initial=0.0)
    return times, dt, log_m, a_int


def _consumption(fn: ContinuationFunctional, state: MarkovState, times, dt, log_m, a_int):
    log_chat = fn.log_ratio(times, log_m, a_int)
    log_h = decay_recursion(log_chat, fn.habit.beta, fn.habit.kappa, dt, state.log_h)
    return log_m + log_chat + log_h


def _validate(fn: ContinuationFunctional) -> None:
    if fn.kind in (FunctionalKind.CONSUMPTION_AT, FunctionalKind.CONSUMPTION_ANNUITY, FunctionalKind.DUAL_FORWARD):
        if fn.log_ratio is None or fn.habit is None:
            raise InvalidParameterError(f"{fn.kind.value} needs a ratio law and habit parameters")
    if fn.kind == FunctionalKind.THETA_RATIO and fn.log_theta is None:
        raise InvalidParameterError("theta_ratio needs a log_theta law")


def nested_mc(
    state: MarkovState,
    functional: ContinuationFunctional,
    n_inner: int,
    seed: int,
    params: MarketParams,
    path_id: int = 0,
    node: int = 0,
    n_steps: Optional[int] = None,
) -> Tuple[float, float]:
    """Estimate E[functional | state] with n_inner restarted paths; returns (estimate, standard error)"""
    if n_inner < 1:
        raise InvalidParameterError("n_inner must be >= 1")
    _validate(functional)
    end = functional.end_time(state.t)

    if end <= state.t:
        # zero lag: integrals vanish, point functionals are known at the node
        if functional.kind != FunctionalKind.CONSUMPTION_AT:
            return 0.0, 0.0
        t = np.array([state.t])
        log_mc = np.log(state.m) + functional.log_ratio(t, np.log([state.m]), np.array([state.a_int])) + state.log_h
        return float(np.exp(log_mc[0])), 0.0

    if n_steps is None:
        inner_dt = functional.inner_dt or functional.horizon / (40 * settings.nested_substeps)
        n_steps = max(1, int(np.ceil((end - state.t) / inner_dt - 1e-9)))
    rng = path_generator(seed, path_id, node, INNER_STREAM)
    times, dt, log_m, a_int = _inner_paths(state, end, n_inner, n_steps, rng, params)
    lag = times - state.t
    kind = functional.kind

    if kind == FunctionalKind.SPD_ANNUITY:
        samples = trapezoid(np.exp(-functional.kappa * lag + log_m - log_m[:, :1]), dx=dt, axis=1)
    elif kind == FunctionalKind.THETA_RATIO:
        log_theta = functional.log_theta(times, log_m, a_int)
        samples = trapezoid(np.exp(log_theta - log_theta[:, :1]), dx=dt, axis=1)
    else:
        log_mc = _consumption(functional, state, times, dt, log_m, a_int)
        if kind == FunctionalKind.CONSUMPTION_AT:
            samples = np.exp(log_mc[:, -1])
        elif kind == FunctionalKind.CONSUMPTION_ANNUITY:
            samples = trapezoid(np.exp(-functional.kappa * lag + log_mc), dx=dt, axis=1)
        else:
            # e^{-alpha L} + e^{-kappa L}(1 - e^{-beta L}) after swapping the integrals
            samples = trapezoid(np.exp(-functional.habit.kappa * lag + log_mc), dx=dt, axis=1)

    record_paths_simulated(n_inner, kind="inner")
    se = float(np.std(samples, ddof=1) / np.sqrt(n_inner)) if n_inner > 1 else 0.0
    return float(np.mean(samples)), se


@traced_component("condexp")
def nested_mc_batch(
    states: Sequence[MarkovState],
    functional: ContinuationFunctional,
    n_inner: int,
    seed: int,
    params: MarketParams,
    path_ids: Sequence[int],
    nodes: Sequence[int],
    threads: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """nested_mc over many nodes, parallel across nodes"""
    def one(i: int):
        return nested_mc(states[i], functional, n_inner, seed, params, path_ids[i], nodes[i])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results: List[Tuple[float, float]] = list(pool.map(one, range(len(states))))
    else:
        results = [one(i) for i in range(len(states))]
    logger.debug("Nested batch evaluated", extra={"nodes": len(states), "n_inner": n_inner, "kind": functional.kind.value})
    est = np.array([r[0] for r in results])
    se = np.array([r[1] for r in results])
    return est, se
