"""Gaussian field simulation by circulant embedding, and the additive
spatially-invariant perturbation ``f = g + eps * X``.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft
from scipy import special, stats

from .covariance import CovarianceModel
from .exceptions import DomainError, EmbeddingError, UsageError

SKELLAM = "skellam"
STUDENT_T = "student_t"
DEGENERATE = "degenerate"
SHIFTED_POISSON = "shifted_poisson"
LAWS = (SKELLAM, STUDENT_T, DEGENERATE, SHIFTED_POISSON)


@dataclass(frozen=True)
class GridSpec:
    nx: int = 1024
    ny: int = 1024
    delta: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 2 or self.ny < 2:
            raise DomainError("grid needs at least 2 pixels per axis")
        if not self.delta > 0:
            raise DomainError("pixel spacing must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.nx), int(self.ny))

    @property
    def area(self) -> float:
        """|T|"""
        return self.nx * self.ny * self.delta**2

    @property
    def perimeter(self) -> float:
        """|dT|_1"""
        return 2.0 * (self.nx + self.ny) * self.delta

    def to_dict(self) -> dict:
        return {"nx": int(self.nx), "ny": int(self.ny), "delta": self.delta}


@dataclass(frozen=True)
class PerturbationSpec:
    """Magnitude ``epsilon`` and the law of the centred variable X.

    ``mu`` is the common Poisson rate for the Skellam law (and the rate of
    the shifted Poisson law); ``nu`` is the Student-t degrees of freedom.
    ``shifted_poisson`` (Poisson(mu) - mu) is a skewed test law with
    ``E[X^3] = mu``.
    """

    epsilon: float = 0.0
    law: str = DEGENERATE
    mu: float = 1.0
    nu: float = 5.0

    def __post_init__(self):
        if self.law not in LAWS:
            raise DomainError(f"unknown perturbation law {self.law!r}; expected one of {LAWS}")
        if not self.epsilon >= 0:
            raise DomainError("epsilon must be >= 0")
        if self.law in (SKELLAM, SHIFTED_POISSON) and not self.mu > 0:
            raise DomainError("Poisson rate mu must be positive")
        if self.law == STUDENT_T and not self.nu > 3:
            raise DomainError("Student-t needs nu > 3 for a finite third absolute moment")

    @classmethod
    def skellam(cls, epsilon, mu=1.0):
        return cls(epsilon=epsilon, law=SKELLAM, mu=mu)

    @classmethod
    def student_t(cls, epsilon, nu=5.0):
        return cls(epsilon=epsilon, law=STUDENT_T, nu=nu)

    @classmethod
    def degenerate(cls):
        return cls(epsilon=0.0, law=DEGENERATE)

    @property
    def m2(self) -> float:
        """E[X^2]"""
        if self.law == SKELLAM:
            return 2.0 * self.mu
        if self.law == STUDENT_T:
            return self.nu / (self.nu - 2.0)
        if self.law == SHIFTED_POISSON:
            return self.mu
        return 0.0

    @property
    def m3(self) -> float:
        """E[X^3]"""
        return self.mu if self.law == SHIFTED_POISSON else 0.0

    @cached_property
    def m3abs(self) -> float:
        """E[|X|^3]"""
        if self.law == STUDENT_T:
            nu = self.nu
            return float(
                nu**1.5 * math.exp(special.gammaln((nu - 3) / 2) - special.gammaln(nu / 2)) / math.sqrt(math.pi)
            )
        if self.law == DEGENERATE:
            return 0.0
        x, p = self.support()
        return float(np.sum(p * np.abs(x) ** 3))

    @property
    def scale(self) -> float:
        """epsilon^2 E[X^2], the quantity the area estimator targets."""
        return self.epsilon**2 * self.m2

    @property
    def is_discrete(self) -> bool:
        return self.law != STUDENT_T

    def support(self, tail: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Atoms and probabilities of a discrete law, truncated so the
        discarded mass is below ``tail``."""
        if self.law == DEGENERATE:
            return np.zeros(1), np.ones(1)
        if self.law == SKELLAM:
            dist = stats.skellam(self.mu, self.mu)
            hi = int(dist.isf(tail / 2)) + 1
            k = np.arange(-hi, hi + 1)
            return k.astype(float), dist.pmf(k)
        if self.law == SHIFTED_POISSON:
            dist = stats.poisson(self.mu)
            hi = int(dist.isf(tail)) + 1
            k = np.arange(0, hi + 1)
            return k - self.mu, dist.pmf(k)
        raise DomainError("continuous law has no discrete support")

    def pdf(self, x):
        if self.law != STUDENT_T:
            raise DomainError("discrete law has no density")
        return stats.t.pdf(x, self.nu)

    def to_dict(self) -> dict:
        d = {"epsilon": self.epsilon, "law": self.law}
        if self.law in (SKELLAM, SHIFTED_POISSON):
            d["mu"] = self.mu
        if self.law == STUDENT_T:
            d["nu"] = self.nu
        return d


@dataclass(frozen=True, eq=False)
class FieldRealization:
    values: np.ndarray
    grid: GridSpec
    shift: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise DomainError(f"lattice shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field values must be finite")
        self.values.flags.writeable = False


@dataclass(frozen=True, eq=False)
class EmbeddingPlan:
    model: CovarianceModel
    grid: GridSpec
    shape: tuple[int, int]
    sqrt_weights: np.ndarray
    clipped_fraction: float

    def __post_init__(self):
        self.sqrt_weights.flags.writeable = False


def _torus_distances(m: int, delta: float) -> np.ndarray:
    i = np.arange(m)
    return np.minimum(i, m - i) * delta


def _spectrum(model, grid, shape):
    dx = _torus_distances(shape[0], grid.delta)
    dy = _torus_distances(shape[1], grid.delta)
    cov = model.covariance(np.hypot(dx[:, None], dy[None, :]))
    eig = scipy.fft.fft2(cov).real
    neg = -eig[eig < 0].sum()
    pos = eig[eig > 0].sum()
    frac = float(neg / pos) if pos > 0 else 1.0
    return np.clip(eig, 0.0, None), frac


def plan_embedding(model: CovarianceModel, grid: GridSpec, clip_tol: float = 1e-6) -> EmbeddingPlan:
    """Minimal even circulant embedding ``2(n-1)`` per axis.

    Negative eigenvalues are clipped; when the clipped fraction exceeds
    ``clip_tol`` the embedding is doubled once before giving up.
    """
    shape = (max(2, 2 * (grid.nx - 1)), max(2, 2 * (grid.ny - 1)))
    eig, frac = _spectrum(model, grid, shape)
    if frac > clip_tol:
        shape = (2 * shape[0], 2 * shape[1])
        eig, frac = _spectrum(model, grid, shape)
        if frac > clip_tol:
            raise EmbeddingError(
                f"circulant embedding {shape} leaves clipped spectral fraction {frac:.3g} > {clip_tol:g}",
                clipped_fraction=frac,
                shape=shape,
            )
    weights = np.sqrt(eig / (shape[0] * shape[1]))
    return EmbeddingPlan(model, grid, shape, weights, frac)


def experiment_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def make_rng(*key) -> np.random.Generator:
    """Counter-based Philox stream keyed by a tuple of non-negative ints
    (e.g. ``(master_seed, replica, experiment_key, stream)``)."""
    if len(key) == 1 and isinstance(key[0], np.random.Generator):
        return key[0]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def simulate_pair(plan: EmbeddingPlan, seed, workers: int | None = None):
    """Two independent realizations from one complex FFT (real and
    imaginary parts)."""
    rng = make_rng(*np.atleast_1d(seed)) if not isinstance(seed, np.random.Generator) else seed
    m = plan.shape
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    y = scipy.fft.fft2(plan.sqrt_weights * z, workers=workers)
    nx, ny = plan.grid.shape
    meta = {"seed": _seed_meta(seed)}
    return (
        FieldRealization(np.ascontiguousarray(y.real[:nx, :ny]), plan.grid, 0.0, dict(meta, part="real")),
        FieldRealization(np.ascontiguousarray(y.imag[:nx, :ny]), plan.grid, 0.0, dict(meta, part="imag")),
    )


def simulate_gaussian(plan: EmbeddingPlan, seed, workers: int | None = None) -> FieldRealization:
    """One realization; deterministic in ``seed`` (int, tuple of ints or Generator)."""
    return simulate_pair(plan, seed, workers)[0]


def _seed_meta(seed):
    if isinstance(seed, np.random.Generator):
        return None
    return [int(s) for s in np.atleast_1d(seed)]


def sample_perturbation(pspec: PerturbationSpec, seed, size=None):
    """Draw X (not scaled by epsilon)."""
    rng = make_rng(*np.atleast_1d(seed)) if not isinstance(seed, np.random.Generator) else seed
    if pspec.law == DEGENERATE:
        return 0.0 if size is None else np.zeros(size)
    if pspec.law == SKELLAM:
        x = rng.poisson(pspec.mu, size) - rng.poisson(pspec.mu, size)
    elif pspec.law == SHIFTED_POISSON:
        x = rng.poisson(pspec.mu, size) - pspec.mu
    else:
        x = rng.standard_t(pspec.nu, size)
    return float(x) if size is None else np.asarray(x, dtype=float)


def perturb(fld: FieldRealization, pspec: PerturbationSpec, x: float) -> FieldRealization:
    if fld.shift != 0:
        raise UsageError("field is already perturbed")
    shift = pspec.epsilon * float(x)
    if shift == 0:
        return fld
    return FieldRealization(fld.values + shift, fld.grid, shift, dict(fld.meta, x=float(x)))


def save_field(fld: FieldRealization, path, model: CovarianceModel | None = None, extra: dict | None = None):
    """Write ``<path>`` as little-endian float64, row-major (nx, ny), plus
    ``<path>.json`` metadata."""
    path = str(path)
    fld.values.astype("<f8").tofile(path)
    meta = {
        "grid": fld.grid.to_dict(),
        "dtype": "<f8",
        "order": "C",
        "shape": list(fld.grid.shape),
        "shift": fld.shift,
        "seed": fld.meta.get("seed"),
        "part": fld.meta.get("part"),
    }
    if model is not None:
        meta["model"] = model.to_dict()
    if extra:
        meta.update(extra)
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_field(path) -> FieldRealization:
    path = str(path)
    with open(path + ".json") as fh:
        meta = json.load(fh)
    grid = GridSpec(**meta["grid"])
    values = np.fromfile(path, dtype="<f8").reshape(grid.shape)
    return FieldRealization(values.astype(float), grid, float(meta.get("shift", 0.0)), {"seed": meta.get("seed")})
