"""Closed-form mean curvatures: Gaussian kinematic formula and its
second-order expansion under the perturbation ``f = g + eps * X``.

All O(eps^3) remainders are dropped, never estimated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .covariance import CovarianceModel
from .exceptions import DomainError
from .field_sim import GridSpec, PerturbationSpec

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class TheoryTriple:
    c0: float
    c1: float
    c2: float

    def as_tuple(self) -> tuple:
        return (self.c0, self.c1, self.c2)


def hermite2(y):
    return y * y - 1.0


def gaussian_tail(x, k: int = 0):
    """k-th derivative of the standard Gaussian tail Psi(x) = P(N > x)."""
    if k not in (0, 1, 2, 3, 4):
        raise DomainError("derivative order must be in 0..4")
    x = np.asarray(x, dtype=float)
    if k == 0:
        out = 0.5 * special.erfc(x / math.sqrt(2.0))
    else:
        d1 = -_INV_SQRT_2PI * np.exp(-0.5 * x * x)
        if k == 1:
            out = d1
        elif k == 2:
            out = -x * d1
        elif k == 3:
            out = d1 * hermite2(x)
        else:
            out = -x * d1 * (hermite2(x) - 2.0)
    return float(out) if out.ndim == 0 else out


def gaussian_lk_densities(model: CovarianceModel, u: float) -> TheoryTriple:
    s = model.sigma_g
    lam = model.second_spectral_moment()
    x = u / s
    return TheoryTriple(
        c0=lam / (2 * math.pi * model.sigma_g2) * gaussian_tail(x, 2),
        c1=-math.sqrt(2 * math.pi * lam) / (4 * s) * gaussian_tail(x, 1),
        c2=gaussian_tail(x, 0),
    )


def _add_boundary(dens: TheoryTriple, grid: GridSpec | None) -> TheoryTriple:
    # mean curvature of a standard field inside a rectangle from its densities
    if grid is None:
        return dens
    area, perim = grid.area, grid.perimeter
    return TheoryTriple(
        c0=dens.c0 + dens.c1 * perim / (math.pi * area) + dens.c2 / area,
        c1=dens.c1 + dens.c2 * perim / (2 * area),
        c2=dens.c2,
    )


def gaussian_mean_normalized(model: CovarianceModel, grid: GridSpec | None, u: float) -> TheoryTriple:
    """E[C_i over T](g, u); ``grid=None`` drops the boundary terms."""
    return _add_boundary(gaussian_lk_densities(model, u), grid)


def perturbed_lk_densities(model: CovarianceModel, u: float, pspec: PerturbationSpec) -> TheoryTriple:
    g = gaussian_lk_densities(model, u)
    lam = model.second_spectral_moment()
    e = pspec.scale
    h2 = hermite2(u / model.sigma_g)
    k = e / (2 * model.sigma_g2)
    return TheoryTriple(
        c0=g.c0 * (1 + k * (h2 - 2)),
        c1=g.c1 * (1 + k * h2),
        c2=g.c2 + e * (math.pi / lam) * g.c0,
    )


def perturbed_mean_normalized(
    model: CovarianceModel, grid: GridSpec | None, u: float, pspec: PerturbationSpec
) -> TheoryTriple:
    return _add_boundary(perturbed_lk_densities(model, u, pspec), grid)


VARIANTS = ("gaussian", "perturbed", "mean_gaussian", "mean_perturbed")


def theory_sweep(model, levels, pspec=None, grid=None, variants=VARIANTS):
    """Rows ``(level, c0, c1, c2, variant)`` over a level grid."""
    pspec = pspec or PerturbationSpec.degenerate()
    rows = []
    for variant in variants:
        for u in levels:
            if variant == "gaussian":
                t = gaussian_lk_densities(model, u)
            elif variant == "perturbed":
                t = perturbed_lk_densities(model, u, pspec)
            elif variant == "mean_gaussian":
                t = gaussian_mean_normalized(model, grid, u)
            elif variant == "mean_perturbed":
                t = perturbed_mean_normalized(model, grid, u, pspec)
            else:
                raise DomainError(f"unknown variant {variant!r}")
            rows.append((float(u), t.c0, t.c1, t.c2, variant))
    return rows


def write_theory_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "c0", "c1", "c2", "variant"])
        for level, c0, c1, c2, variant in rows:
            w.writerow([repr(level), repr(c0), repr(c1), repr(c2), variant])
