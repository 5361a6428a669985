import math

import numpy as np
import pytest
from scipy import integrate, signal, stats

from perturbed_lk import (
    CovarianceModel,
    DomainError,
    NumericalError,
    PerturbationSpec,
    bep_density,
    exact_mixture_density,
    gamma_coefficients,
    sample_limit_law,
    truncated_limit_density,
    variance_derivatives,
    variance_v,
    variance_v_series,
)
from perturbed_lk.limit_law import (
    TABULATED,
    TAYLOR,
    exact_mixture_cdf,
    limit_law_params,
    mixture_variance,
    nodal_variance,
    truncated_density_minimum,
)

# frozen reference values of v(u) for sigma = 1, kappa = 100/1024
V_REF = {0.0: 57.08411280565, 1.0: 25.74160374850, 1.5: 9.780718906705, 3.0: 0.08721786966}

TABLE1 = {  # (u, eps) -> (gamma1, gamma2), Skellam(1, 1)
    (1.5, 0.5): (0.979, 0.686), (1.5, 0.3): (0.352, 0.245), (1.5, 0.1): (0.039, 0.028),
    (3.0, 0.5): (2.818, 2.508), (3.0, 0.3): (1.015, 0.903), (3.0, 0.1): (0.113, 0.101),
}
TABLE2 = {  # Student-t with 5 degrees of freedom
    (1.5, 0.5): (0.816, 0.576), (1.5, 0.3): (0.294, 0.206), (1.5, 0.1): (0.033, 0.023),
    (3.0, 0.5): (2.349, 2.091), (3.0, 0.3): (0.846, 0.753), (3.0, 0.1): (0.094, 0.084),
}


@pytest.mark.parametrize("u, ref", sorted(V_REF.items()))
def test_variance_reference_values(model, u, ref):
    assert variance_v(model, u) == pytest.approx(ref, rel=1e-8)


def test_v_even_and_decreasing(model):
    us = np.linspace(1.0, 6.0, 26)
    vs = [variance_v(model, u) for u in us]
    assert np.all(np.diff(vs) < 0)
    assert variance_v(model, -1.7) == pytest.approx(variance_v(model, 1.7), rel=1e-12)


def test_series_first_term_closed_form(model):
    u = 0.8
    phi2 = math.exp(-u * u) / (2 * math.pi)
    assert variance_v_series(model, u, N=1) == pytest.approx(phi2 * math.pi / model.kappa**2, rel=1e-14)


def test_series_odd_terms_vanish_at_zero():
    m = CovarianceModel(1.0, 1.0)
    # even truncations add only the (vanishing) odd-order Hermite term
    for N in (2, 10, 60):
        assert variance_v_series(m, 0.0, N) == variance_v_series(m, 0.0, N - 1)


@pytest.mark.parametrize("u", [0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
def test_series_at_60_within_truncation_bound(model, u):
    quad = variance_v(model, u)
    s, tail = variance_v_series(model, u, N=60, return_tail=True)
    # the series converges like N^{-3/2}; 60 terms leave a tail of ~1e-3 relative
    assert 0 < quad - s <= 1.5 * tail
    assert quad - s == pytest.approx(tail, rel=0.5)


def test_nodal_identity(model):
    assert variance_v(model, 0.0) == pytest.approx(nodal_variance(model), rel=1e-9)


@pytest.mark.parametrize("u", [0.5, 1.0, 1.5, 2.0, 3.0])
def test_derivatives_vs_finite_differences(model, u):
    vp, vpp = variance_derivatives(model, u)
    h = 1e-4
    fd1 = (variance_v(model, u + h, 1e-13) - variance_v(model, u - h, 1e-13)) / (2 * h)
    assert vp == pytest.approx(fd1, rel=1e-4)
    h = 1e-2
    fd2 = (variance_v(model, u + h, 1e-13) - 2 * variance_v(model, u, 1e-13) + variance_v(model, u - h, 1e-13)) / h**2
    assert vpp == pytest.approx(fd2, rel=1e-3)


def test_derivative_vanishes_at_zero(model):
    vp, vpp = variance_derivatives(model, 0.0)
    assert vp == 0.0
    assert vpp < 0


def test_bad_tolerance(model):
    with pytest.raises(DomainError):
        variance_v(model, 1.0, tol=0.0)


def test_unreachable_tolerance_reports_diagnostics(model):
    with pytest.raises(NumericalError) as info:
        variance_v(model, 0.3, tol=1e-300)
    assert info.value.diagnostics["u"] == 0.3
    assert info.value.exit_code == 3


def test_bep_shapes():
    v = 2.5
    assert bep_density(v, 0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi * v))
    assert bep_density(v, 2, 0.0) == 0.0
    y = np.linspace(-4, 4, 9)
    np.testing.assert_allclose(bep_density(v, 0, y), stats.norm(scale=math.sqrt(v)).pdf(y), rtol=1e-14)
    for d in (0, 2, 4):
        assert integrate.quad(lambda t: bep_density(v, d, t), -np.inf, np.inf, epsabs=1e-13)[0] == pytest.approx(
            1.0, abs=1e-8
        )
    with pytest.raises(DomainError):
        bep_density(0.0, 0, 1.0)
    with pytest.raises(DomainError):
        bep_density(1.0, 3, 1.0)


@pytest.mark.parametrize("table, make", [(TABLE1, PerturbationSpec.skellam), (TABLE2, PerturbationSpec.student_t)])
def test_gamma_tables(model, table, make):
    for (u, eps), (g1, g2) in table.items():
        a, b = gamma_coefficients(model, u, make(eps))
        assert abs(a - g1) < 0.01 and abs(b - g2) < 0.01, (u, eps, a, b)


def test_gamma_linear_in_scale(model):
    a = np.array(gamma_coefficients(model, 3.0, PerturbationSpec.skellam(0.5)))
    b = np.array(gamma_coefficients(model, 3.0, PerturbationSpec.skellam(0.3)))
    np.testing.assert_allclose(a, 25 / 9 * b, rtol=1e-12)


def test_gamma_conventions(model):
    p = PerturbationSpec.skellam(0.5)
    tab, taylor = limit_law_params(model, 1.5, p), limit_law_params(model, 1.5, p, TAYLOR)
    assert tab.gamma1 == taylor.gamma1
    assert taylor.gamma2 / tab.gamma2 == pytest.approx(2 * math.sqrt(2) / 4)
    with pytest.raises(DomainError):
        gamma_coefficients(model, 1.5, p, convention="other")


def test_truncated_density_normalized_and_symmetric(model):
    p = PerturbationSpec.skellam(0.5)
    prm = limit_law_params(model, 1.5, p)
    assert (1 + prm.gamma1 - prm.gamma2) + (prm.gamma2 - 2 * prm.gamma1) + prm.gamma1 == pytest.approx(1.0, abs=1e-15)
    total = integrate.quad(lambda y: truncated_limit_density(model, 1.5, p, y, params=prm), -np.inf, np.inf,
                           epsabs=1e-12, epsrel=1e-12)[0]
    assert total == pytest.approx(1.0, abs=1e-6)
    # a central peak plus two symmetric side lobes from the delta = 2, 4 components
    y = np.linspace(-15, 15, 3001)
    h = truncated_limit_density(model, 1.5, p, y, params=prm)
    peaks = y[signal.argrelmax(h)[0]]
    np.testing.assert_allclose(peaks, -peaks[::-1], atol=1e-12)
    assert len(peaks) == 3 and peaks[1] == 0.0
    # the exact limit law is a scale mixture of centred normals, hence unimodal
    he = exact_mixture_density(model, 1.5, p, y[y > 0.05])
    assert np.all(np.diff(he) < 0)


def test_truncated_density_at_zero_eps(model):
    y = np.linspace(-10, 10, 7)
    v = variance_v(model, 1.5)
    np.testing.assert_allclose(
        truncated_limit_density(model, 1.5, PerturbationSpec.skellam(0.0), y), bep_density(v, 0, y), rtol=1e-15
    )


def test_truncated_density_can_go_negative(model):
    assert truncated_density_minimum(model, 0.0, PerturbationSpec.skellam(0.5)) < 0
    assert truncated_density_minimum(model, 1.5, PerturbationSpec.skellam(0.1)) >= 0


def test_exact_mixture_degenerate(model):
    y = np.array([-3.0, 0.5, 4.0])
    v = variance_v(model, 1.5)
    for p in (PerturbationSpec.degenerate(), PerturbationSpec.student_t(0.0)):
        np.testing.assert_allclose(exact_mixture_density(model, 1.5, p, y), bep_density(v, 0, y), rtol=1e-15)


def test_exact_mixture_truncation_info(model):
    _, info = exact_mixture_density(model, 1.5, PerturbationSpec.skellam(0.5), 1.0, return_info=True)
    assert info["discarded_mass"] < 1e-12
    _, info = exact_mixture_density(model, 1.5, PerturbationSpec.student_t(0.5), 1.0, return_info=True)
    assert info["quad_error"] < 1e-8


def test_mixture_cdf_limits(model):
    for p in (PerturbationSpec.skellam(0.5), PerturbationSpec.student_t(0.5)):
        assert exact_mixture_cdf(model, 1.5, p, 0.0) == pytest.approx(0.5, abs=1e-9)
        assert exact_mixture_cdf(model, 1.5, p, -200.0) < 1e-9
        assert exact_mixture_cdf(model, 1.5, p, 200.0) > 1 - 1e-9


def test_truncation_error_order(model):
    # sup |h - h_tilde| as eps shrinks; the derived 1/4 constant gives the O(eps^4) remainder
    # of a symmetric law, while the tabulated constant leaves an O(eps^2) mismatch
    eps = np.array([0.1, 0.05, 0.025])
    y = np.linspace(-12, 12, 801)
    y = y[np.abs(y) > 0.5]
    sups = {TABULATED: [], TAYLOR: []}
    for e in eps:
        p = PerturbationSpec.skellam(e)
        h = exact_mixture_density(model, 1.5, p, y)
        for conv in sups:
            sups[conv].append(np.max(np.abs(h - truncated_limit_density(model, 1.5, p, y, convention=conv))))
    slope = {c: np.polyfit(np.log(eps), np.log(s), 1)[0] for c, s in sups.items()}
    assert slope[TAYLOR] > 2.9
    assert 1.8 < slope[TABULATED] < 2.2


def test_sampler_moments_and_cdf(model):
    p = PerturbationSpec.skellam(0.5)
    draws = sample_limit_law(model, 1.5, p, (4, 2), 100_000)
    assert np.mean(draws**2) == pytest.approx(mixture_variance(model, 1.5, p), rel=0.02)
    ks = stats.kstest(draws, lambda t: exact_mixture_cdf(model, 1.5, p, t)).statistic
    assert ks < 0.01


def test_sampler_student_t(model):
    p = PerturbationSpec.student_t(0.5)
    draws = sample_limit_law(model, 1.5, p, 9, 50_000)
    assert np.mean(draws**2) == pytest.approx(mixture_variance(model, 1.5, p), rel=0.03)


def test_sampler_deterministic_and_gaussian_at_zero(model):
    p0 = PerturbationSpec.skellam(0.0)
    a = sample_limit_law(model, 1.5, p0, 3, 50_000)
    assert np.array_equal(a, sample_limit_law(model, 1.5, p0, 3, 50_000))
    assert stats.kstest(a, stats.norm(scale=math.sqrt(variance_v(model, 1.5))).cdf).pvalue > 1e-3
    assert isinstance(sample_limit_law(model, 1.5, p0, 3), float)
