"""Estimating the perturbation scale ``eps^2 E[X^2]`` from the excursion
area at a single level (unit-variance fields only)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .covariance import CovarianceModel
from .exceptions import DomainError, UsageError
from .field_sim import PerturbationSpec
from .gkf import gaussian_tail, perturbed_lk_densities
from .limit_law import exact_area_mean, variance_v

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class EpsilonEstimate:
    u: float
    eps_hat: float
    sigma2: float
    area_T: float
    ci_low: float
    ci_high: float
    level: float = 0.95


def _check_level(u):
    if u == 0:
        raise DomainError(
            "u = 0 makes the scale estimator degenerate (its variance diverges); use estimate_cubic instead"
        )


def _check_unit(model: CovarianceModel):
    if not math.isclose(model.sigma_g2, 1.0, rel_tol=1e-12):
        raise UsageError(
            "the scale estimator assumes sigma_g = 1; divide the field (and the level) by sigma_g first, "
            "see rescale_to_unit_variance"
        )


def prefactor(u: float) -> float:
    """2 sqrt(2 pi) exp(u^2/2) / u."""
    _check_level(u)
    return 2.0 * _SQRT_2PI * math.exp(0.5 * u * u) / u


def epsilon_target(model: CovarianceModel, u: float, pspec: PerturbationSpec) -> float:
    """eps_u from the second-order area density; equals eps^2 E[X^2] up to rounding."""
    _check_level(u)
    _check_unit(model)
    c2 = perturbed_lk_densities(model, u, pspec).c2
    return prefactor(u) * (c2 - gaussian_tail(u))


def epsilon_target_exact(model: CovarianceModel, u: float, pspec: PerturbationSpec) -> float:
    """Mean of the estimator under the model, using E[Psi(u - eps X)] without expansion."""
    _check_level(u)
    _check_unit(model)
    return prefactor(u) * (exact_area_mean(model, u, pspec) - gaussian_tail(u))


def estimate_epsilon(c2_hat, u: float):
    """eps_hat_u from the (bias-corrected) excursion area fraction."""
    _check_level(u)
    out = prefactor(u) * (np.asarray(c2_hat, dtype=float) - gaussian_tail(u))
    return float(out) if out.ndim == 0 else out


def epsilon_asymptotic_variance(model: CovarianceModel, u: float, tol: float = 1e-10) -> float:
    """8 pi exp(u^2) v(u) / u^2."""
    _check_level(u)
    _check_unit(model)
    return 8.0 * math.pi * math.exp(u * u) * variance_v(model, u, tol) / (u * u)


def confidence_interval(est: float, sigma2: float, area_T: float, level: float = 0.95) -> tuple[float, float]:
    if not 0 < level < 1:
        raise DomainError("confidence level must be in (0, 1)")
    if not area_T > 0:
        raise DomainError("area must be positive")
    half = stats.norm.ppf(0.5 * (1 + level)) * math.sqrt(sigma2 / area_T)
    return float(est - half), float(est + half)


def estimate(model: CovarianceModel, c2_hat: float, u: float, area_T: float, level: float = 0.95) -> EpsilonEstimate:
    eps_hat = estimate_epsilon(c2_hat, u)
    sigma2 = epsilon_asymptotic_variance(model, u)
    lo, hi = confidence_interval(eps_hat, sigma2, area_T, level)
    return EpsilonEstimate(float(u), eps_hat, sigma2, float(area_T), lo, hi, level)


def estimate_cubic(c2_hat_at_0):
    """eps^3 E[X^3] from the area fraction at level 0.

    At u = 0 the eps^2 term of E[Psi(-eps X)] vanishes and the cubic term is
    -eps^3 E[X^3] Psi'''(0) / 6 with Psi'''(0) = 1/sqrt(2 pi).
    """
    out = -6.0 * _SQRT_2PI * (np.asarray(c2_hat_at_0, dtype=float) - 0.5)
    return float(out) if out.ndim == 0 else out


def cubic_target_exact(pspec: PerturbationSpec) -> float:
    """Mean of :func:`estimate_cubic` under the model (unit variance)."""
    return estimate_cubic(exact_area_mean(CovarianceModel(sigma_g2=1.0), 0.0, pspec))


def rescale_to_unit_variance(values, u: float, model: CovarianceModel):
    """Map a field with variance sigma_g^2 and a level to the unit-variance setting.

    Returns ``(values / sigma_g, u / sigma_g, unit_model)``; the estimated scale
    then refers to ``(eps / sigma_g)^2 E[X^2]``.
    """
    s = model.sigma_g
    unit = CovarianceModel(sigma_g2=1.0, kappa=model.kappa, kind=model.kind)
    return np.asarray(values) / s, u / s, unit
