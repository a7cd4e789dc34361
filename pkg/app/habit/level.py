import numpy as np

from app.market.spd import check_on_grid
from app.schemas.params import HabitParams, TimeGrid


def decay_recursion(driver: np.ndarray, beta: float, kappa: float, dt: float, initial=0.0) -> np.ndarray:
    """log h_{k+1} = e^{-kappa dt} log h_k + beta dt e^{-kappa dt/2} (d_k + d_{k+1})/2"""
    decay = np.exp(-kappa * dt)
    weight = beta * dt * np.exp(-0.5 * kappa * dt)
    avg = 0.5 * (driver[..., :-1] + driver[..., 1:])
    log_h = np.empty_like(driver)
    log_h[..., 0] = initial
    for k in range(driver.shape[-1] - 1):
        log_h[..., k + 1] = decay * log_h[..., k] + weight * avg[..., k]
    return log_h


def integrate_log_habit(log_c: np.ndarray, hp: HabitParams, grid: TimeGrid, initial=0.0) -> np.ndarray:
    """Geometric habit log h_t = beta int_0^t e^{-alpha(t-s)} log c_s ds driven by log consumption"""
    log_c = check_on_grid(log_c, grid, "log_c")
    return decay_recursion(log_c, hp.beta, hp.alpha, grid.dt, initial)


def ratio_and_level(log_chat: np.ndarray, hp: HabitParams, grid: TimeGrid, initial=0.0):
    """Habit and consumption level generated by a ratio path.

    Uses the reduced dynamics d log h = (beta log chat - (alpha - beta) log h) dt.
    Returns (log_h, log_c) with log_c = log_chat + log_h.
    """
    log_chat = check_on_grid(log_chat, grid, "log_chat")
    log_h = decay_recursion(log_chat, hp.beta, hp.kappa, grid.dt, initial)
    return log_h, log_chat + log_h
