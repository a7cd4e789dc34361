import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.condexp.analytic import RatioLaw, annuity_factor
from app.schemas.params import MarketParams, ModelParams


class BBLApproximation(BaseModel):
    """Taylor-expansion ratio consumption (eta e^{delta t} M_t {1 + beta a(t)})^{-1/gamma}.

    a(t) is the annuity factor of M_s/M_t discounted at alpha - beta over the
    remaining horizon. The ratio depends on the path only through M_t.
    """
    model_config = ConfigDict(frozen=True)

    model: ModelParams
    market: MarketParams
    eta: float = Field(..., gt=0.0)

    def _offset(self, times):
        """Deterministic part d(t) of log chat"""
        pref, hp = self.model.preferences, self.model.habit
        times = np.asarray(times, dtype=float)
        remaining = np.maximum(self.model.horizon - times, 0.0)
        multiplier = np.log1p(hp.beta * annuity_factor(hp.kappa, remaining, self.market))
        return -(np.log(self.eta) + pref.delta * times + multiplier) / pref.gamma

    def log_ratio(self, times, log_m, a_int=None):
        return self._offset(times) - np.asarray(log_m) / self.model.preferences.gamma

    def ratio_law(self) -> RatioLaw:
        slope = -1.0 / self.model.preferences.gamma
        return RatioLaw(
            d=self._offset,
            p=lambda u: np.full(np.shape(u), slope),
            ell=0.0,
        )


def bbl_ratio(t, m_t, eta: float, model: ModelParams, market: MarketParams):
    approx = BBLApproximation(model=model, market=market, eta=eta)
    out = np.exp(approx.log_ratio(t, np.log(m_t)))
    return float(out) if np.ndim(out) == 0 else out
