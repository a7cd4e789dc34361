"""Closed-form conditional expectations under the constant-coefficient market.

With X_u = log(M_u / M_t) = -m (u - t) - lambda (W_u - W_t), every functional
exp(a0 + b_end X_s + int_t^s w(s-u) X_u du) is lognormal given F_t. Writing
L(x) = b_end + int_x^s w(s-u) du, its log-mean is -m int_t^s L and its
log-variance lambda^2 int_t^s L^2.
"""
from typing import Callable
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import quad

from app.condexp.kernels import Kernel, gauss_legendre
from app.core.errors import KernelError
from app.market.spd import market_price_of_risk, spd_drift
from app.schemas.params import HabitParams, MarketParams

logger = logging.getLogger(__name__)


class ExpAffineSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: float
    s: float
    a0: float = 0.0
    b_end: float = 0.0
    weight: Kernel = Field(default_factory=Kernel.zero)

    @model_validator(mode='after')
    def check_order(self) -> "ExpAffineSpec":
        if self.s < self.t:
            raise ValueError("evaluation time s must be >= conditioning time t")
        return self


def cond_exp_exp_affine(spec: ExpAffineSpec, params: MarketParams) -> float:
    lam = market_price_of_risk(params)
    m = spd_drift(params)
    tau = spec.s - spec.t
    tail = spec.weight.antiderivative()

    def loading(z):
        return spec.b_end + float(tail(z))

    if tau == 0.0:
        int_l = int_l2 = 0.0
    else:
        int_l, _ = quad(loading, 0.0, tau, epsabs=1e-12, epsrel=1e-12, limit=200)
        int_l2, _ = quad(lambda z: loading(z) ** 2, 0.0, tau, epsabs=1e-12, epsrel=1e-12, limit=200)
    exponent = spec.a0 - m * int_l + 0.5 * lam * lam * int_l2
    value = float(np.exp(exponent))
    if not np.isfinite(value):
        raise KernelError("exponential-affine expectation is not finite for this kernel")
    return value


def annuity_factor(kappa: float, tau, params: MarketParams):
    """E[int_t^{t+tau} e^{-kappa(s-t)} M_s/M_t ds | F_t] = (1 - e^{-(kappa+r) tau}) / (kappa + r)"""
    rate = kappa + params.r
    tau = np.asarray(tau, dtype=float)
    if abs(rate) < 1e-14:
        out = tau
    else:
        out = -np.expm1(-rate * tau) / rate
    return float(out) if out.ndim == 0 else out


def decay_integral(kappa: float, z):
    """E1(z) = int_0^z e^{-kappa y} dy"""
    z = np.asarray(z, dtype=float)
    if abs(kappa) < 1e-14:
        return z
    return -np.expm1(-kappa * z) / kappa


def decay_double_integral(kappa: float, z):
    """E2(z) = int_0^z E1(y) dy"""
    z = np.asarray(z, dtype=float)
    if abs(kappa) < 1e-14:
        return 0.5 * z * z
    return (z - decay_integral(kappa, z)) / kappa


class RatioLaw(BaseModel):
    """Ratio consumption of the form log chat_u = d(u) + p(u) log M_u + ell A_u.

    d and p are vectorized functions of calendar time.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    d: Callable[[np.ndarray], np.ndarray]
    p: Callable[[np.ndarray], np.ndarray]
    ell: float = 0.0

    def log_ratio(self, times, log_m, a_int):
        times = np.asarray(times, dtype=float)
        return self.d(times) + self.p(times) * log_m + self.ell * a_int


class ForwardCoefficients(BaseModel):
    """log E[M_s c'_s | F_t] = const + lm log M_t + la A_t + lh log h_t"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    const: np.ndarray
    lm: np.ndarray
    la: np.ndarray
    lh: np.ndarray

    def log_moment(self, log_m_t, a_t, log_h_t):
        """Broadcast path states (shape (n,)) against the lag axis of the coefficients"""
        log_m_t = np.asarray(log_m_t, dtype=float)[..., None]
        a_t = np.asarray(a_t, dtype=float)[..., None]
        log_h_t = np.asarray(log_h_t, dtype=float)[..., None]
        return self.const + self.lm * log_m_t + self.la * a_t + self.lh * log_h_t


def forward_coefficients(
    law: RatioLaw,
    hp: HabitParams,
    params: MarketParams,
    t: float,
    s,
    n_nodes: int = 32,
) -> ForwardCoefficients:
    """Coefficients of E[M_s c'_s | F_t] for consumption c' = chat h generated by ``law``.

    The habit follows the reduced dynamics with decay kappa = alpha - beta,
    started from the current log h_t. ``s`` may be an array of evaluation times.
    """
    lam = market_price_of_risk(params)
    m = spd_drift(params)
    kappa, beta, ell = hp.kappa, hp.beta, law.ell

    s = np.atleast_1d(np.asarray(s, dtype=float))
    tau = s - t
    if np.any(tau < 0.0):
        raise KernelError("evaluation times must not precede the conditioning time")

    # v-nodes on [0, tau] for the habit convolutions
    v, wv = gauss_legendre(np.zeros_like(tau), tau, n_nodes)
    decay = np.exp(-kappa * (tau[:, None] - v))
    d_v = law.d(t + v)
    p_v = law.p(t + v)
    p_s = law.p(s)

    const = law.d(s) + beta * np.sum(wv * decay * d_v, axis=-1)
    lm = 1.0 + p_s + ell * tau + beta * np.sum(wv * decay * (p_v + ell * v), axis=-1)
    la = ell * (1.0 + beta * decay_integral(kappa, tau))
    lh = np.exp(-kappa * tau)

    # loading L(x) on x-nodes, with the inner convolution on [x, tau]
    x, wx = gauss_legendre(np.zeros_like(tau), tau, n_nodes)
    y, wy = gauss_legendre(x, tau[:, None] * np.ones_like(x), n_nodes)
    inner = np.sum(wy * np.exp(-kappa * (tau[:, None, None] - y)) * law.p(t + y), axis=-1)
    loading = (1.0 + p_s)[:, None] + ell * (tau[:, None] - x) + beta * inner \
        + ell * beta * decay_double_integral(kappa, tau[:, None] - x)
    int_l = np.sum(wx * loading, axis=-1)
    int_l2 = np.sum(wx * loading ** 2, axis=-1)

    return ForwardCoefficients(
        const=const - m * int_l + 0.5 * lam * lam * int_l2,
        lm=lm,
        la=la,
        lh=lh,
    )
