"""Stationary isotropic covariance models on the plane.

Lengths are measured in pixels unless a grid spacing says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import DomainError

# radial integrals are cut where the correlation drops below this
RHO_CUTOFF = 1e-14

SQUARED_EXPONENTIAL = "squared_exponential"
_KINDS = (SQUARED_EXPONENTIAL,)


@dataclass(frozen=True)
class CovarianceModel:
    """Isotropic covariance ``r(t) = sigma_g2 * rho(||t||)``.

    Only the squared-exponential (Bargmann-Fock) kernel
    ``rho(s) = exp(-kappa**2 s**2)`` is built in.  Subclasses may override
    :meth:`rho` and :meth:`second_spectral_moment` to add kernels; the
    quadrature paths then pick them up automatically.
    """

    sigma_g2: float = 1.0
    kappa: float = 100 / 2**10
    kind: str = SQUARED_EXPONENTIAL

    def __post_init__(self):
        if self.kind not in _KINDS and type(self) is CovarianceModel:
            raise DomainError(f"unknown covariance kind {self.kind!r}")
        if not self.sigma_g2 > 0:
            raise DomainError("sigma_g2 must be positive")
        if not self.kappa > 0:
            raise DomainError("kappa must be positive")

    @property
    def sigma_g(self) -> float:
        return math.sqrt(self.sigma_g2)

    def rho(self, s):
        """Correlation at distance ``s`` (vectorised, no domain check)."""
        s = np.asarray(s, dtype=float)
        return np.exp(-(self.kappa * s) ** 2)

    def covariance(self, s):
        return self.sigma_g2 * self.rho(s)

    def second_spectral_moment(self) -> float:
        return 2.0 * self.kappa**2 * self.sigma_g2

    def cutoff_radius(self, threshold: float = RHO_CUTOFF) -> float:
        """Smallest radius beyond which ``|rho| < threshold``."""
        if self.kind == SQUARED_EXPONENTIAL and type(self) is CovarianceModel:
            return math.sqrt(math.log(1.0 / threshold)) / self.kappa
        s = 1.0 / self.kappa
        while abs(float(self.rho(s))) >= threshold:
            s *= 2.0
            if s > 1e12:
                raise DomainError("correlation does not decay; cannot truncate radial integral")
        return s

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma_g2": self.sigma_g2, "kappa": self.kappa}


def correlation(model: CovarianceModel, s):
    """rho(s) = r(s) / sigma_g^2 for distances ``s >= 0``."""
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0):
        raise DomainError("distance must be non-negative")
    out = model.rho(arr)
    return float(out) if out.ndim == 0 else out


def second_spectral_moment(model: CovarianceModel) -> float:
    """lambda, the variance of each partial derivative of the field."""
    return model.second_spectral_moment()


def rho_power_integral(model: CovarianceModel, n: int, method: str = "auto") -> float:
    """Integral of ``rho(t)**n`` over the plane.

    ``method="auto"`` uses ``pi / (n kappa^2)`` for the squared-exponential
    kernel and radial quadrature otherwise; ``"quad"`` forces quadrature.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be an integer >= 1")
    n = int(n)
    closed = model.kind == SQUARED_EXPONENTIAL and type(model) is CovarianceModel
    if method == "auto" and closed:
        return math.pi / (n * model.kappa**2)
    if method not in ("auto", "quad"):
        raise DomainError(f"unknown method {method!r}")
    smax = model.cutoff_radius()
    # the integrand is concentrated near s ~ 1/(kappa sqrt(n)); split there
    knots = sorted({smax * f for f in (0.0, 1.0)} | {min(smax, 3.0 / (model.kappa * math.sqrt(n)))})
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        val, _ = integrate.quad(
            lambda s: s * float(model.rho(s)) ** n, a, b, epsabs=0.0, epsrel=1e-12, limit=200
        )
        total += val
    return 2.0 * math.pi * total
