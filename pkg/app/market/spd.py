from concurrent.futures import ThreadPoolExecutor
from typing import Optional
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.integrate import cumulative_trapezoid, trapezoid

from app.core.errors import GridMismatchError, InvalidParameterError
from app.core.metrics import record_paths_simulated
from app.core.tracing import traced_component
from app.market.rng import BRIDGE_STREAM, chunk_ranges, path_generator
from app.schemas.params import MarketParams, TimeGrid

logger = logging.getLogger(__name__)


class PathBatch(BaseModel):
    """Simulated market paths on a uniform grid, shape (n_paths, n_steps + 1)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: TimeGrid
    seed: int
    brownian: np.ndarray
    log_m: np.ndarray
    a_int: np.ndarray  # running trapezoid integral of log M
    log_chat: Optional[np.ndarray] = None
    log_h: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return self.log_m.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def m(self) -> np.ndarray:
        return np.exp(self.log_m)

    @property
    def log_c(self) -> Optional[np.ndarray]:
        if self.log_chat is None or self.log_h is None:
            return None
        return self.log_chat + self.log_h

    def with_consumption(self, log_chat: np.ndarray, log_h: np.ndarray) -> "PathBatch":
        return self.model_copy(update={"log_chat": log_chat, "log_h": log_h})


def market_price_of_risk(params: MarketParams) -> float:
    if not params.sigma > 0.0:
        raise InvalidParameterError(f"sigma must be positive, got {params.sigma}")
    return (params.mu - params.r) / params.sigma


def spd_drift(params: MarketParams) -> float:
    """m = r + lambda^2/2, so that log M_t = -m t - lambda W_t"""
    lam = market_price_of_risk(params)
    return params.r + 0.5 * lam * lam


def spd_moment(q: float, tau, params: MarketParams):
    """E[(M_s/M_t)^q | F_t] for s - t = tau"""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0.0):
        raise InvalidParameterError("tau must be non-negative")
    lam = market_price_of_risk(params)
    m = spd_drift(params)
    out = np.exp(-q * m * tau + 0.5 * q * q * lam * lam * tau)
    return float(out) if out.ndim == 0 else out


def log_spd_increments(dw: np.ndarray, dt: float, params: MarketParams) -> np.ndarray:
    """Exact lognormal steps of log M for Brownian increments dw"""
    return -spd_drift(params) * dt - market_price_of_risk(params) * dw


def _fill_brownian(out: np.ndarray, seed: int, lo: int, hi: int, dt: float) -> None:
    sqdt = np.sqrt(dt)
    n_steps = out.shape[1] - 1
    for i in range(lo, hi):
        rng = path_generator(seed, i)
        out[i, 1:] = np.cumsum(rng.standard_normal(n_steps) * sqdt)


@traced_component("market")
def simulate_paths(params: MarketParams, grid: TimeGrid, n_paths: int, seed: int, threads: int = 1) -> PathBatch:
    if n_paths < 1:
        raise InvalidParameterError(f"n_paths must be >= 1, got {n_paths}")
    market_price_of_risk(params)

    brownian = np.zeros((n_paths, grid.n_steps + 1))
    ranges = chunk_ranges(n_paths, threads)
    if len(ranges) == 1:
        _fill_brownian(brownian, seed, 0, n_paths, grid.dt)
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            futures = [pool.submit(_fill_brownian, brownian, seed, lo, hi, grid.dt) for lo, hi in ranges]
            for f in futures:
                f.result()

    log_m = np.zeros_like(brownian)
    log_m[:, 1:] = np.cumsum(log_spd_increments(np.diff(brownian, axis=1), grid.dt, params), axis=1)
    a_int = cumulative_trapezoid(log_m, dx=grid.dt, axis=1, initial=0.0)

    record_paths_simulated(n_paths)
    logger.info("Market paths simulated", extra={
        "n_paths": n_paths,
        "n_steps": grid.n_steps,
        "seed": seed,
        "threads": len(ranges),
    })
    return PathBatch(grid=grid, seed=seed, brownian=brownian, log_m=log_m, a_int=a_int)


def check_on_grid(values: np.ndarray, grid: TimeGrid, name: str = "array") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.n_steps + 1:
        raise GridMismatchError(
            f"{name} has {values.shape[-1]} grid points, expected {grid.n_steps + 1}"
        )
    return values


def time_integral(values: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Trapezoid rule for int_0^T values dt along the last axis"""
    values = check_on_grid(values, grid)
    return trapezoid(values, dx=grid.dt, axis=-1)


def refine_paths(batch: PathBatch, params: MarketParams) -> PathBatch:
    """Same Brownian paths on a grid with twice the steps, midpoints filled by Brownian bridges.

    Bridge draws use the per-path key (path id, BRIDGE_STREAM) so the refined batch is
    deterministic and coupled to the coarse one.
    """
    grid = batch.grid.refined(2)
    n = batch.grid.n_steps
    brownian = np.empty((batch.n_paths, 2 * n + 1))
    brownian[:, ::2] = batch.brownian
    bridge_sd = np.sqrt(batch.grid.dt / 4.0)
    for i in range(batch.n_paths):
        z = path_generator(batch.seed, i, BRIDGE_STREAM).standard_normal(n)
        brownian[i, 1::2] = 0.5 * (batch.brownian[i, :-1] + batch.brownian[i, 1:]) + bridge_sd * z
    log_m = np.zeros_like(brownian)
    log_m[:, 1:] = np.cumsum(log_spd_increments(np.diff(brownian, axis=1), grid.dt, params), axis=1)
    a_int = cumulative_trapezoid(log_m, dx=grid.dt, axis=1, initial=0.0)
    return PathBatch(grid=grid, seed=batch.seed, brownian=brownian, log_m=log_m, a_int=a_int)
