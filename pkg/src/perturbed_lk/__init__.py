"""Lipschitz-Killing curvatures of excursion sets of Gaussian fields under a
small spatially-invariant random perturbation ``f = g + eps X``."""

__version__ = "0.1.0"

from .covariance import CovarianceModel, correlation, rho_power_integral, second_spectral_moment
from .exceptions import ConfigError, DomainError, EmbeddingError, NumericalError, UsageError
from .excursion import (
    ExcursionMask,
    LKEstimate,
    bias_correct,
    excursion_mask,
    lk_curvatures,
    measure,
    normalize,
)
from .field_sim import (
    FieldRealization,
    GridSpec,
    PerturbationSpec,
    perturb,
    plan_embedding,
    sample_perturbation,
    simulate_gaussian,
    simulate_pair,
)
from .gkf import (
    TheoryTriple,
    gaussian_lk_densities,
    gaussian_mean_normalized,
    gaussian_tail,
    perturbed_lk_densities,
    perturbed_mean_normalized,
)
from .inference import (
    EpsilonEstimate,
    confidence_interval,
    epsilon_asymptotic_variance,
    epsilon_target,
    estimate_cubic,
    estimate_epsilon,
)
from .limit_law import (
    LimitLawParams,
    bep_density,
    exact_mixture_density,
    gamma_coefficients,
    sample_limit_law,
    truncated_limit_density,
    variance_derivatives,
    variance_v,
    variance_v_series,
)
