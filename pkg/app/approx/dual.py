"""First-order parameter expansion of the optimal dual process around the
no-habit optimum, and the ratio consumption it implies through the second
duality relation.

With q = 1 - 1/gamma the expansion is driven by

    F(t)  = E[int_t^T e^{-delta(s-t)/gamma} (M_s/M_t)^q ds | F_t]
    G(t)  = E[int_t^T theta_s/theta_t ds | F_t]
    P_t   = -(1/gamma)(t log eta + delta t^2/2 + A_t) + F(t)
    Phat_t = beta q (t log eta + delta t^2/2 + A_t) + (gamma alpha + (1-gamma) beta) F(t)
    Q_t   = F(t) - G(t)

The running integral in Phat is measured from the current level log(eta M_t),
so the log M_t loadings cancel in theta_s/theta_t and both F and G depend on t
only. G is integrated in s with Gauss-Legendre nodes; its integrand is
lognormal because the running integral is affine in the path of log M.
"""
from typing import Optional
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.condexp.analytic import RatioLaw, decay_integral
from app.condexp.kernels import gauss_legendre
from app.condexp.nested import MarkovState
from app.market.spd import market_price_of_risk, spd_drift
from app.schemas.params import MarketParams, ModelParams

logger = logging.getLogger(__name__)

_CHUNK = 1 << 16
_ARRAY_FIELDS = ('t', 'F', 'G', 'P', 'Q', 'P_hat', 'log_theta', 'log_psi_star', 'log_ratio')


class DualExpansionTerms(BaseModel):
    """Expansion terms at one or many nodes; arrays share the node shape (0-d for one node)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t: np.ndarray
    F: np.ndarray
    G: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    P_hat: np.ndarray
    log_theta: np.ndarray
    log_psi_star: np.ndarray
    log_ratio: np.ndarray
    # loadings of P and Phat on A_t
    p_a_loading: float
    p_hat_a_loading: float

    @field_validator(*_ARRAY_FIELDS, mode='before')
    @classmethod
    def as_array(cls, v) -> np.ndarray:
        return np.asarray(v, dtype=float)


class DualExpansion(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: ModelParams
    market: MarketParams
    eta: float = Field(..., gt=0.0)
    n_nodes: int = Field(default=32, ge=2)

    # constants of the expansion

    @property
    def _q(self) -> float:
        return 1.0 - 1.0 / self.model.preferences.gamma

    @property
    def _rho(self) -> float:
        pref = self.model.preferences
        lam = market_price_of_risk(self.market)
        q = self._q
        return pref.delta / pref.gamma + q * spd_drift(self.market) - 0.5 * q * q * lam * lam

    @property
    def _k(self) -> float:
        g, hp = self.model.preferences.gamma, self.model.habit
        return g * hp.alpha + (1.0 - g) * hp.beta

    def F(self, t):
        t = np.asarray(t, dtype=float)
        return decay_integral(self._rho, np.maximum(self.model.horizon - t, 0.0))

    def _running(self, t, a_int):
        """t log eta + delta t^2/2 + A_t"""
        t = np.asarray(t, dtype=float)
        return t * np.log(self.eta) + 0.5 * self.model.preferences.delta * t * t + a_int

    def _log_theta_growth(self, t, s):
        """log E[theta_s/theta_t | F_t] for s >= t"""
        pref, hp = self.model.preferences, self.model.habit
        g, delta, beta = pref.gamma, pref.delta, hp.beta
        q, m, lam = self._q, spd_drift(self.market), market_price_of_risk(self.market)
        c = beta / g
        lag = s - t
        return (
            -delta * lag / g
            - beta * q * delta * (s * s - t * t) / (2.0 * g)
            - self._k * (self.F(s) - self.F(t)) / g
            - m * (q * lag - beta * q * lag * lag / (2.0 * g))
            + 0.5 * lam * lam * q * q * (lag - c * lag * lag + c * c * lag ** 3 / 3.0)
        )

    def G(self, t):
        """G(t) = int_t^T E[theta_s/theta_t | F_t] ds"""
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        out = np.empty(flat.shape)
        for lo in range(0, flat.size, _CHUNK):
            tt = flat[lo:lo + _CHUNK]
            s, w = gauss_legendre(tt, np.full_like(tt, self.model.horizon), self.n_nodes)
            out[lo:lo + _CHUNK] = np.sum(w * np.exp(self._log_theta_growth(tt[:, None], s)), axis=-1)
        return out.reshape(t.shape)

    def terms(self, t, log_m, a_int) -> DualExpansionTerms:
        pref, hp = self.model.preferences, self.model.habit
        g, delta, alpha, beta = pref.gamma, pref.delta, hp.alpha, hp.beta
        t, log_m, a_int = np.broadcast_arrays(
            np.asarray(t, dtype=float), np.asarray(log_m, dtype=float), np.asarray(a_int, dtype=float)
        )
        log_eta = np.log(self.eta)
        running = self._running(t, a_int)
        f = self.F(t)
        gg = self.G(t)
        p = -running / g + f
        p_hat = beta * self._q * running + self._k * f
        q_term = f - gg
        log_theta = self._q * (log_eta + log_m) - delta * t / g - p_hat / g
        log_ratio = -(log_eta + delta * t + beta * p + alpha * g / (1.0 - g) * q_term + log_m) / g
        return DualExpansionTerms(
            t=t, F=f, G=gg, P=p, Q=q_term, P_hat=p_hat,
            log_theta=log_theta,
            log_psi_star=log_theta + alpha * gg,
            log_ratio=log_ratio,
            p_a_loading=-1.0 / g,
            p_hat_a_loading=beta * self._q,
        )

    def log_ratio(self, times, log_m, a_int):
        return self.terms(times, log_m, a_int).log_ratio

    def log_theta(self, times, log_m, a_int):
        """log theta* only; G is not needed for it"""
        pref = self.model.preferences
        times = np.asarray(times, dtype=float)
        p_hat = self.model.habit.beta * self._q * self._running(times, a_int) + self._k * self.F(times)
        return self._q * (np.log(self.eta) + log_m) - pref.delta * times / pref.gamma - p_hat / pref.gamma

    def ratio_law(self) -> RatioLaw:
        """Law of log chat as d(u) + p log M + ell A; exact because F and G are deterministic"""
        pref, hp = self.model.preferences, self.model.habit
        g, delta, alpha, beta = pref.gamma, pref.delta, hp.alpha, hp.beta
        log_eta = np.log(self.eta)

        def d(u):
            u = np.asarray(u, dtype=float)
            f = self.F(u)
            return (
                -(log_eta + delta * u) / g
                + beta * (u * log_eta + 0.5 * delta * u * u) / g ** 2
                - beta * f / g
                + alpha * (f - self.G(u)) / (g - 1.0)
            )

        return RatioLaw(
            d=d,
            p=lambda u: np.full(np.shape(u), -1.0 / g),
            ell=beta / g ** 2,
        )


def _expansion(eta: float, model: ModelParams, market: MarketParams, n_nodes: Optional[int]) -> DualExpansion:
    return DualExpansion(model=model, market=market, eta=eta, n_nodes=n_nodes or 32)


def dual_expansion_terms(state: MarkovState, eta: float, model: ModelParams, market: MarketParams,
                         n_nodes: Optional[int] = None) -> DualExpansionTerms:
    return _expansion(eta, model, market, n_nodes).terms(state.t, np.log(state.m), state.a_int)


def dual_ratio(state: MarkovState, eta: float, model: ModelParams, market: MarketParams,
               n_nodes: Optional[int] = None) -> float:
    return float(np.exp(dual_expansion_terms(state, eta, model, market, n_nodes).log_ratio))


def psi_star(state: MarkovState, eta: float, model: ModelParams, market: MarketParams,
             n_nodes: Optional[int] = None) -> float:
    return float(np.exp(dual_expansion_terms(state, eta, model, market, n_nodes).log_psi_star))
