"""Power utility over the consumption ratio and its Fenchel conjugates.

All functions accept scalars or numpy arrays (broadcast over t and x) and
return the same shape.
"""
import numpy as np

from app.core.errors import DomainError
from app.schemas.params import PreferenceParams


def _positive(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(x > 0.0):
        raise DomainError(f"{name} must be strictly positive")
    return x


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def utility(t, x, p: PreferenceParams):
    """U(t, x) = exp(-delta t) x^(1-gamma) / (1-gamma)"""
    x = _positive(x)
    g = p.gamma
    return _out(np.exp(-p.delta * np.asarray(t) + (1.0 - g) * np.log(x)) / (1.0 - g))


def marginal_utility(t, x, p: PreferenceParams):
    x = _positive(x)
    return _out(np.exp(-p.delta * np.asarray(t) - p.gamma * np.log(x)))


def inverse_ratio_marginal(t, x, p: PreferenceParams):
    """I(t, x): the ratio z solving U'(t, z) z = x"""
    x = _positive(x)
    return _out(np.exp((np.log(x) + p.delta * np.asarray(t)) / (1.0 - p.gamma)))


def inverse_marginal(t, x, p: PreferenceParams):
    """Ihat(t, x): the level z solving U'(t, z) = x"""
    x = _positive(x)
    return _out(np.exp(-(np.log(x) + p.delta * np.asarray(t)) / p.gamma))


def conjugate_v1(t, x, p: PreferenceParams):
    """V1(t, x) = inf_z {-U(t, e^-z) - x z}"""
    x = _positive(x)
    return _out(x * (np.log(x) + p.delta * np.asarray(t) - 1.0) / (1.0 - p.gamma))


def conjugate_v2(x):
    """V2(x) = inf_z {e^z - x z}"""
    x = _positive(x)
    return _out(x - x * np.log(x))
