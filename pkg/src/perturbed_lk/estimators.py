"""scikit-learn compatible wrappers.

Samples are whole fields: ``X`` has shape ``(n_fields, nx, ny)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .covariance import CovarianceModel
from .excursion import ExcursionMask, bias_correct, lk_curvatures, normalize
from .field_sim import GridSpec, PerturbationSpec, make_rng, perturb, plan_embedding, sample_perturbation, simulate_pair
from .inference import confidence_interval, epsilon_asymptotic_variance, estimate_epsilon


def check_fields(X) -> np.ndarray:
    """Validate a stack of 2-D lattices; a single lattice is promoted."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected fields of shape (n_fields, nx, ny), got {X.shape}")
    if X.shape[1] < 2 or X.shape[2] < 2:
        raise ValueError("each field needs at least 2 pixels per axis")
    return X


def check_levels(levels) -> np.ndarray:
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if levels.ndim != 1 or levels.size == 0 or not np.all(np.isfinite(levels)):
        raise ValueError("levels must be a non-empty 1-D array of finite values")
    return levels


class LKCurvatureTransformer(TransformerMixin, BaseEstimator):
    """Excursion-set curvature features.

    Parameters
    ----------
    levels : array-like
        Excursion levels ``u``.
    delta : float
        Pixel spacing.
    output : {"hat", "over_T", "raw"}
        Bias-corrected densities, normalized curvatures or raw ``(L0, L1, L2)``.
    perimeter : {"pixel", "crofton"}

    ``transform`` returns shape ``(n_fields, n_levels * 3)`` ordered
    ``(u0: c0, c1, c2, u1: c0, ...)``.
    """

    def __init__(self, levels=(0.0,), delta=1.0, output="hat", perimeter="pixel"):
        self.levels = levels
        self.delta = delta
        self.output = output
        self.perimeter = perimeter

    def fit(self, X, y=None):
        X = check_fields(X)
        if self.output not in ("hat", "over_T", "raw"):
            raise ValueError(f"unknown output {self.output!r}")
        self.levels_ = check_levels(self.levels)
        self.field_shape_ = X.shape[1:]
        self.n_features_out_ = 3 * self.levels_.size
        return self

    def transform(self, X):
        check_is_fitted(self, "levels_")
        X = check_fields(X)
        if X.shape[1:] != self.field_shape_:
            raise ValueError(f"fitted on fields of shape {self.field_shape_}, got {X.shape[1:]}")
        grid = GridSpec(X.shape[1], X.shape[2], self.delta)
        out = np.empty((X.shape[0], self.n_features_out_))
        for n, values in enumerate(X):
            for j, u in enumerate(self.levels_):
                est = lk_curvatures(ExcursionMask(values >= u, u, grid), self.perimeter)
                if self.output == "raw":
                    trip = est.raw
                elif self.output == "over_T":
                    trip = normalize(est, grid).c_over_T
                else:
                    trip = bias_correct(normalize(est, grid), grid).c_hat
                out[n, 3 * j : 3 * j + 3] = trip
        return out

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "levels_")
        return np.array([f"u{u:g}_c{i}" for u in self.levels_ for i in range(3)], dtype=object)


class PerturbationScaleEstimator(BaseEstimator):
    """Estimate ``eps^2 E[X^2]`` from the excursion area at one level.

    Unit-variance fields only.  After ``fit``: ``eps_hat_`` (mean over
    fields), ``eps_hat_samples_``, ``sigma2_`` and ``ci_`` (theoretical
    interval for a single field of this size, centred on ``eps_hat_``).
    """

    def __init__(self, level=1.5, kappa=100 / 2**10, delta=1.0, confidence=0.95):
        self.level = level
        self.kappa = kappa
        self.delta = delta
        self.confidence = confidence

    def fit(self, X, y=None):
        X = check_fields(X)
        model = CovarianceModel(sigma_g2=1.0, kappa=self.kappa)
        area = X.shape[1] * X.shape[2] * self.delta**2
        c2 = np.count_nonzero(X >= self.level, axis=(1, 2)) / (X.shape[1] * X.shape[2])
        self.eps_hat_samples_ = np.atleast_1d(estimate_epsilon(c2, self.level))
        self.eps_hat_ = float(self.eps_hat_samples_.mean())
        self.sigma2_ = epsilon_asymptotic_variance(model, self.level)
        self.area_ = area
        self.ci_ = confidence_interval(self.eps_hat_, self.sigma2_, area, self.confidence)
        return self

    def predict(self, X):
        """Per-field estimates."""
        check_is_fitted(self, "eps_hat_")
        X = check_fields(X)
        c2 = np.count_nonzero(X >= self.level, axis=(1, 2)) / (X.shape[1] * X.shape[2])
        return np.atleast_1d(estimate_epsilon(c2, self.level))


class PerturbedFieldSampler(BaseEstimator):
    """Draws perturbed fields ``g + eps X`` on an ``nx x ny`` lattice."""

    def __init__(self, nx=256, ny=256, delta=1.0, sigma_g2=1.0, kappa=100 / 2**10,
                 epsilon=0.0, law="degenerate", mu=1.0, nu=5.0, random_state=0):
        self.nx = nx
        self.ny = ny
        self.delta = delta
        self.sigma_g2 = sigma_g2
        self.kappa = kappa
        self.epsilon = epsilon
        self.law = law
        self.mu = mu
        self.nu = nu
        self.random_state = random_state

    def sample(self, n_fields=1, return_shifts=False):
        model = CovarianceModel(self.sigma_g2, self.kappa)
        grid = GridSpec(self.nx, self.ny, self.delta)
        pspec = PerturbationSpec(self.epsilon, self.law, self.mu, self.nu)
        plan = plan_embedding(model, grid)
        seed = int(self.random_state)
        fields, shifts = [], []
        for k in range((n_fields + 1) // 2):
            for part, g in enumerate(simulate_pair(plan, (seed, k, 0))):
                i = 2 * k + part
                if i >= n_fields:
                    break
                f = perturb(g, pspec, sample_perturbation(pspec, make_rng(seed, i, 1)))
                fields.append(np.array(f.values))
                shifts.append(f.shift)
        out = np.stack(fields)
        return (out, np.array(shifts)) if return_shifts else out
