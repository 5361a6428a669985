"""Asymptotic variance of the excursion area and the non-Gaussian limit
law of the centred area under a fixed perturbation.

``v(u)`` is the limit of ``|T| Var(C2 over T)``.  Two independent routes
are provided: nested adaptive quadrature of the covariance integral
(:func:`variance_v`) and the Hermite (Wiener chaos) series
(:func:`variance_v_series`).  They share nothing but the correlation
function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, interpolate, special, stats

from .covariance import CovarianceModel, rho_power_integral
from .exceptions import DomainError, NumericalError
from .field_sim import PerturbationSpec, make_rng, sample_perturbation
from .gkf import gaussian_tail

TABULATED = "tabulated"
TAYLOR = "taylor"
# gamma2 = C * eps^2 E[X^2] v''/v; the reference tables use 1/(2 sqrt 2),
# a second-order Taylor expansion of the mixture density gives 1/4
GAMMA2_CONSTANTS = {TABULATED: 1.0 / (2.0 * math.sqrt(2.0)), TAYLOR: 0.25}


@dataclass(frozen=True)
class LimitLawParams:
    v: float
    vp: float
    vpp: float
    gamma1: float
    gamma2: float


def _weight(order: int, u: float, a: float) -> float:
    # u-derivatives of exp(-u^2 / a), divided by the exponential
    if order == 0:
        return 1.0
    if order == 1:
        return -2.0 * u / a
    return 4.0 * u * u / (a * a) - 2.0 / a


@lru_cache(maxsize=4096)
def _v_integral(model: CovarianceModel, u: float, order: int, tol: float) -> float:
    s2 = model.sigma_g2
    smax = model.cutoff_radius()
    # 10% of the budget goes to truncating the radial integral
    qtol = 0.9 * tol
    scale = rho_power_integral(model, 1) / (2.0 * math.pi)
    mag = math.exp(-u * u / (2.0 * s2)) * (1.0 + abs(u)) ** order
    epsabs = qtol * scale * mag

    # the inner integrand is smooth and bounded; below ~1e-14 only roundoff is left
    in_rel = max(0.1 * qtol, 1e-14)
    worst = [0.0]

    def inner(s):
        rho = float(model.rho(s))
        top = math.asin(max(-1.0, min(1.0, rho)))

        def f(theta):
            a = s2 * (1.0 + math.sin(theta))
            return _weight(order, u, a) * math.exp(-u * u / a)

        val, err = integrate.quad(f, 0.0, top, epsabs=epsabs * 1e-3, epsrel=in_rel, limit=100, full_output=1)[:2]
        worst[0] = max(worst[0], err / max(epsabs * 1e-3, in_rel * abs(val), 1e-300))
        return s * val

    out = integrate.quad(inner, 0.0, smax, epsabs=epsabs, epsrel=qtol, limit=200, full_output=1)
    val, err = out[0], out[1]
    if len(out) > 3 or not math.isfinite(val) or err > max(epsabs, qtol * abs(val)) * 10 or worst[0] > 100:
        raise NumericalError(
            "variance quadrature did not converge",
            u=u,
            order=order,
            value=val,
            abserr=err,
            inner_error_ratio=worst[0],
            quad_message=out[3] if len(out) > 3 else "",
        )
    return val


def variance_v(model: CovarianceModel, u: float, tol: float = 1e-10) -> float:
    """v(u) by radial reduction, ``r = sin(theta)`` and nested adaptive quadrature."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    return _v_integral(model, float(u), 0, float(tol))


def variance_derivatives(model: CovarianceModel, u: float, tol: float = 1e-10) -> tuple[float, float]:
    """(v'(u), v''(u)) by differentiating under the integral sign."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    u = float(u)
    return _v_integral(model, u, 1, float(tol)), _v_integral(model, u, 2, float(tol))


def variance_v_series(model: CovarianceModel, u: float, N: int = 4000, return_tail: bool = False):
    """Truncated Hermite series ``sum_{n<=N} phi(u)^2 H_{n-1}(u)^2 / n! * int rho^n``.

    Uses the normalised recurrence ``h_n = H_n / sqrt(n!)`` so nothing
    overflows.  With ``return_tail=True`` also returns an estimate of the
    discarded tail, assuming the ``n^{-5/2}`` decay of the terms.
    """
    if int(N) != N or N < 1:
        raise DomainError("N must be an integer >= 1")
    N = int(N)
    x = u / model.sigma_g
    phi2 = math.exp(-x * x) / (2.0 * math.pi)
    terms = np.empty(N)
    h_prev, h = 0.0, 1.0
    for n in range(1, N + 1):
        # h holds h_{n-1}
        terms[n - 1] = phi2 * h * h / n * rho_power_integral(model, n)
        h_prev, h = h, (x * h - math.sqrt(n - 1) * h_prev) / math.sqrt(n)
    total = float(math.fsum(terms))
    if not return_tail:
        return total
    block = terms[N // 2 :]
    tail = float(block.mean() * N / (2.0 * (2.0**1.5 - 1.0))) if N >= 2 else float(terms[-1])
    return total, tail


def nodal_variance(model: CovarianceModel, tol: float = 1e-12) -> float:
    """v(0) = (2 pi)^{-1} int_{R^2} arcsin(rho(t)) dt, by a single radial quadrature."""
    smax = model.cutoff_radius()
    val, _ = integrate.quad(
        lambda s: s * math.asin(float(model.rho(s))), 0.0, smax, epsabs=0.0, epsrel=tol, limit=200
    )
    return val


def bep_density(v: float, delta: int, y):
    """Bimodal exponential power density with shape ``delta`` and scale ``sqrt(2 v)``."""
    if not v > 0:
        raise DomainError("variance must be positive")
    if delta not in (0, 2, 4):
        raise DomainError("delta must be 0, 2 or 4")
    y = np.asarray(y, dtype=float)
    zeta = math.sqrt(2.0 * v)
    z = y / zeta
    out = np.abs(z) ** delta * np.exp(-z * z) / (zeta * special.gamma((delta + 1) / 2.0))
    return float(out) if out.ndim == 0 else out


def limit_law_params(
    model: CovarianceModel, u: float, pspec: PerturbationSpec, convention: str = TABULATED, tol: float = 1e-10
) -> LimitLawParams:
    if convention not in GAMMA2_CONSTANTS:
        raise DomainError(f"unknown gamma2 convention {convention!r}")
    v = variance_v(model, u, tol)
    vp, vpp = variance_derivatives(model, u, tol)
    e = pspec.scale
    g1 = 3.0 / 8.0 * e * (vp / v) ** 2
    g2 = GAMMA2_CONSTANTS[convention] * e * vpp / v
    return LimitLawParams(v, vp, vpp, g1, g2)


def gamma_coefficients(model, u, pspec, convention: str = TABULATED, tol: float = 1e-10) -> tuple[float, float]:
    p = limit_law_params(model, u, pspec, convention, tol)
    return p.gamma1, p.gamma2


def truncated_limit_density(model, u, pspec, y, convention: str = TABULATED, params: LimitLawParams | None = None):
    """Second-order expansion of the limit density as a BEP mixture.

    Not clamped: for large gamma the expansion can go negative, see
    :func:`truncated_density_minimum`.
    """
    p = params or limit_law_params(model, u, pspec, convention)
    return (
        bep_density(p.v, 0, y) * (1 + p.gamma1 - p.gamma2)
        + bep_density(p.v, 2, y) * (p.gamma2 - 2 * p.gamma1)
        + bep_density(p.v, 4, y) * p.gamma1
    )


def truncated_density_minimum(model, u, pspec, convention: str = TABULATED, n: int = 2001) -> float:
    p = limit_law_params(model, u, pspec, convention)
    y = np.linspace(-8, 8, n) * math.sqrt(p.v)
    return float(np.min(truncated_limit_density(model, u, pspec, y, params=p)))


def gaussian_pdf(v, y):
    """N(0, v) density; ``v == 0`` (underflow far in the tails) gives 0."""
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.exp(-(y * y) / (2 * v)) / np.sqrt(2 * math.pi * v)
    return np.where(v > 0, out, 0.0)


def _continuous_bounds(pspec, tail):
    dist = stats.t(pspec.nu)
    return float(dist.ppf(tail / 2)), float(dist.isf(tail / 2))


def _mixture(model, u, pspec, fn, tail):
    """E[fn(level, v(level))] over level = u - eps X, with truncation info."""
    if pspec.epsilon == 0 or pspec.law == "degenerate":
        return fn(u, variance_v(model, u)), {"discarded_mass": 0.0, "n_atoms": 1}
    if pspec.is_discrete:
        x, p = pspec.support(tail)
        acc = 0.0
        for xi, pi in zip(x, p):
            level = u - pspec.epsilon * xi
            acc = acc + pi * fn(level, variance_v(model, level))
        return acc, {"discarded_mass": float(max(0.0, 1.0 - p.sum())), "n_atoms": len(x)}
    lo, hi = _continuous_bounds(pspec, tail)
    table = VarianceTable.for_levels(model, u - pspec.epsilon * hi, u - pspec.epsilon * lo)
    val, err = integrate.quad_vec(
        lambda xi: pspec.pdf(xi) * fn(u - pspec.epsilon * xi, table(u - pspec.epsilon * xi)),
        lo,
        hi,
        epsrel=1e-10,
        epsabs=1e-13,
        limit=2000,
    )
    return val, {"discarded_mass": tail, "quad_error": float(np.max(err))}


def exact_mixture_density(model, u, pspec, y, tail: float = 1e-12, return_info: bool = False):
    """E[phi(v(u - eps X), y)], the exact limit density.

    Diverges at ``y = 0`` in exact arithmetic for unbounded X; with the
    truncated support it stays finite but is dominated by the tails there.
    """
    y = np.asarray(y, dtype=float)
    val, info = _mixture(model, u, pspec, lambda lev, v: gaussian_pdf(v, y), tail)
    val = np.asarray(val, dtype=float)
    val = float(val) if val.ndim == 0 else val
    return (val, info) if return_info else val


def exact_mixture_cdf(model, u, pspec, y, tail: float = 1e-12):
    """P(Theta <= y) = E[Phi(y / sqrt(v(u - eps X)))]."""
    y = np.asarray(y, dtype=float)

    def fn(level, v):
        with np.errstate(divide="ignore"):
            # v underflows to 0 far out: use the v -> 0+ limit of Phi(y / sqrt(v))
            return np.where(v > 0, special.ndtr(y / np.sqrt(np.maximum(v, 1e-300))), 0.5 * (1.0 + np.sign(y)))

    val, _ = _mixture(model, u, pspec, fn, tail)
    val = np.asarray(val, dtype=float)
    return float(val) if val.ndim == 0 else val


def mixture_variance(model, u, pspec, tail: float = 1e-12) -> float:
    """E[v(u - eps X)] = Var(Theta)."""
    return float(_mixture(model, u, pspec, lambda lev, v: v, tail)[0])


def exact_area_mean(model, u, pspec, tail: float = 1e-12) -> float:
    """E[Psi((u - eps X) / sigma_g)], the non-expanded perturbed area density."""
    if pspec.epsilon == 0 or pspec.law == "degenerate":
        return float(gaussian_tail(u / model.sigma_g))
    s = model.sigma_g
    if pspec.is_discrete:
        x, p = pspec.support(tail)
        return float(np.sum(p * gaussian_tail((u - pspec.epsilon * x) / s)))
    val, _ = integrate.quad(
        lambda xi: pspec.pdf(xi) * gaussian_tail((u - pspec.epsilon * xi) / s),
        -np.inf,
        np.inf,
        epsabs=1e-14,
        epsrel=1e-12,
        limit=500,
    )
    return float(val)


class VarianceTable:
    """Cubic spline of ``log v`` on a level grid; ``v`` is even in the level.

    Levels past ``max_level`` (where v underflows) map to 0.
    """

    def __init__(self, model: CovarianceModel, max_level: float, step: float = 0.05):
        self.model = model
        lim = min(max_level, 36.0 * model.sigma_g)
        self.max_level = lim
        grid = np.arange(0.0, lim + 2 * step, step)
        vals = np.array([variance_v(model, w) for w in grid])
        ok = vals > 0
        self._grid = grid[ok]
        self._spline = interpolate.CubicSpline(self._grid, np.log(vals[ok]))

    @classmethod
    def for_levels(cls, model, lo, hi, step=0.05):
        return _table(model, round(max(abs(lo), abs(hi)) + 0.5, 1), step)

    def __call__(self, level):
        w = np.abs(np.asarray(level, dtype=float))
        out = np.where(w <= self._grid[-1], np.exp(self._spline(np.minimum(w, self._grid[-1]))), 0.0)
        return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=32)
def _table(model, max_level, step):
    return VarianceTable(model, max_level, step)


def sample_limit_law(model, u, pspec, seed, size=None):
    """Draws of Theta_eps(u): X first, then N(0, v(u - eps X))."""
    rng = make_rng(*np.atleast_1d(seed)) if not isinstance(seed, np.random.Generator) else seed
    n = 1 if size is None else int(size)
    x = np.atleast_1d(sample_perturbation(pspec, rng, n))
    levels = u - pspec.epsilon * x
    if pspec.epsilon == 0 or pspec.law == "degenerate":
        v = np.full(n, variance_v(model, u))
    elif pspec.is_discrete:
        uniq, inv = np.unique(levels, return_inverse=True)
        v = np.array([variance_v(model, lv) for lv in uniq])[inv]
    else:
        table = VarianceTable.for_levels(model, levels.min(), levels.max())
        v = table(levels)
    draws = np.sqrt(v) * rng.standard_normal(n)
    return float(draws[0]) if size is None else draws
