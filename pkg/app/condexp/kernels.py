"""Poly-exponential weight kernels in the lag variable z = s - u.

A kernel is a finite sum w(z) = sum_i c_i z^p_i exp(-a_i z). The family is
closed under products and under z-antiderivatives, which is what Fubini
flattening of iterated time integrals needs.
"""
from functools import lru_cache
from math import factorial
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import KernelError

_ZERO_RATE = 1e-12


@lru_cache(maxsize=16)
def _leggauss(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(a, b, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [a, b], broadcast over the shapes of a and b (node axis last)"""
    x, w = _leggauss(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


class PolyExpTerm(BaseModel):
    model_config = ConfigDict(frozen=True)

    coef: float
    power: int = Field(default=0, ge=0)
    rate: float = 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = self.coef * np.exp(-self.rate * z)
        if self.power:
            out = out * z ** self.power
        return out


class Kernel(BaseModel):
    model_config = ConfigDict(frozen=True)

    terms: Tuple[PolyExpTerm, ...] = ()

    @classmethod
    def zero(cls) -> "Kernel":
        return cls()

    @classmethod
    def constant(cls, c: float) -> "Kernel":
        return cls(terms=(PolyExpTerm(coef=c),)).simplified()

    @classmethod
    def exponential(cls, c: float, rate: float) -> "Kernel":
        """w(z) = c exp(-rate z), i.e. u -> c exp(-rate (s - u))"""
        return cls(terms=(PolyExpTerm(coef=c, rate=rate),)).simplified()

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for term in self.terms:
            out = out + term(z)
        return out

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def simplified(self) -> "Kernel":
        merged: dict = {}
        for term in self.terms:
            key = (term.power, term.rate)
            merged[key] = merged.get(key, 0.0) + term.coef
        return Kernel(terms=tuple(
            PolyExpTerm(coef=c, power=p, rate=a) for (p, a), c in sorted(merged.items()) if c != 0.0
        ))

    def __add__(self, other: "Kernel") -> "Kernel":
        return Kernel(terms=self.terms + _as_kernel(other).terms).simplified()

    def __mul__(self, other) -> "Kernel":
        if isinstance(other, (int, float)):
            return Kernel(terms=tuple(
                PolyExpTerm(coef=t.coef * other, power=t.power, rate=t.rate) for t in self.terms
            )).simplified()
        other = _as_kernel(other)
        return Kernel(terms=tuple(
            PolyExpTerm(coef=a.coef * b.coef, power=a.power + b.power, rate=a.rate + b.rate)
            for a in self.terms for b in other.terms
        )).simplified()

    __rmul__ = __mul__

    def antiderivative(self) -> "Kernel":
        """K(z) = int_0^z w(y) dy, again poly-exponential"""
        out = []
        for t in self.terms:
            p, a = t.power, t.rate
            if abs(a) < _ZERO_RATE:
                out.append(PolyExpTerm(coef=t.coef / (p + 1), power=p + 1))
                continue
            scale = t.coef * factorial(p) / a ** (p + 1)
            out.append(PolyExpTerm(coef=scale))
            for j in range(p + 1):
                out.append(PolyExpTerm(coef=-scale * a ** j / factorial(j), power=j, rate=a))
        return Kernel(terms=tuple(out)).simplified()


def _as_kernel(k) -> Kernel:
    if not isinstance(k, Kernel):
        raise KernelError(f"unsupported kernel family: {type(k).__name__}")
    return k


def flatten_iterated(outer: Kernel, inner: Kernel, direct: Optional[Kernel] = None) -> Kernel:
    """Effective weight of the iterated integral in the lag variable z = s - v.

    For int_t^s outer(s-u) [direct(s-u) X_u + int_t^u inner(s-v) X_v dv] du the
    weight on X_v after swapping the order of integration is
    outer(z) direct(z) + inner(z) int_0^z outer(y) dy. ``direct`` defaults to 1.
    """
    outer = _as_kernel(outer)
    inner = _as_kernel(inner)
    direct = Kernel.constant(1.0) if direct is None else _as_kernel(direct)
    return outer * direct + inner * outer.antiderivative()
