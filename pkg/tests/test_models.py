import math

import numpy as np
import pytest
from scipy.stats import binom, invgamma, norm

from paic import (
    ConjugateNormalModel,
    HierLogitModel,
    ModelDefinition,
    ObservationSet,
    ValidationError,
    conjugate_posterior,
    loglik_total,
    logpost_unnorm,
)
from paic.models import scaled_inv_chi2_logpdf


def test_observation_set_validation():
    with pytest.raises(ValidationError):
        ObservationSet(np.array([1.0]))  # n >= 2
    with pytest.raises(ValidationError):
        ObservationSet(np.array([1.0, np.nan]))
    with pytest.raises(ValidationError):
        ObservationSet(np.array([3.0, 7.5]), np.array([10, 10]))  # non-integer count
    with pytest.raises(ValidationError):
        ObservationSet(np.array([3.0, 11.0]), np.array([10, 10]))  # y > n_i
    data = ObservationSet(np.array([3.0, 7.0]), np.array([10, 10]))
    assert data.n == 2


def test_normal_loglik_standard_point():
    # standard normal density at 0 for one term
    m = ConjugateNormalModel(1.0, tau02=None)
    data = ObservationSet(np.array([0.0, 5.0]))
    assert m.loglik_i(data, 0, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert m.loglik_i(data, 0, [0.0]) == pytest.approx(norm.logpdf(0.0), abs=1e-12)


def test_normal_loglik_total_two_symmetric_points():
    m = ConjugateNormalModel(1.0, tau02=None)
    data = ObservationSet(np.array([1.0, -1.0]))
    assert loglik_total(m, data, [0.0]) == pytest.approx(-math.log(2 * math.pi) - 1.0)


def test_hier_loglik_half_probability():
    m = HierLogitModel(np.full(4, 50))
    data = ObservationSet(np.full(4, 25.0), np.full(4, 50))
    theta = np.concatenate([np.zeros(4), [0.0, 1.0]])
    expected = binom.logpmf(25, 50, 0.5)
    terms = m.loglik_terms(data, theta)
    np.testing.assert_allclose(terms, expected, rtol=1e-12)
    assert loglik_total(m, data, theta) == pytest.approx(4 * expected)


def test_logpost_flat_prior_equals_loglik():
    m = ConjugateNormalModel(2.0, tau02=None)
    data = ObservationSet(np.array([0.3, -1.2, 0.7]))
    for theta in ([0.0], [1.3], [-2.0]):
        assert logpost_unnorm(m, data, theta) == pytest.approx(
            loglik_total(m, data, theta))


def test_logpost_proper_prior_at_its_mean():
    m = ConjugateNormalModel(1.0, mu0=0.0, tau02=1.0)
    data = ObservationSet(np.array([0.5, -0.5]))
    expected = loglik_total(m, data, [0.0]) - 0.5 * math.log(2 * math.pi)
    assert logpost_unnorm(m, data, [0.0]) == pytest.approx(expected)


def test_logpost_hier_logit_closed_form_pieces():
    m = HierLogitModel(np.full(3, 50))
    data = ObservationSet(np.array([20.0, 25.0, 30.0]), np.full(3, 50))
    theta = np.concatenate([np.zeros(3), [0.0, 10.0]])
    expected = (
        binom.logpmf(data.y, 50, 0.5).sum()
        + 3 * norm.logpdf(0.0, 0.0, math.sqrt(10.0))
        + norm.logpdf(0.0, 0.0, 1000.0)
        + invgamma.logpdf(10.0, 0.05, scale=0.5)  # scaled-inv-chi2(0.1, 10)
    )
    assert logpost_unnorm(m, data, theta) == pytest.approx(expected, rel=1e-12)


def test_scaled_inv_chi2_matches_invgamma():
    # Inv-chi2(nu, s2) == InvGamma(nu/2, nu*s2/2)
    for x in (0.1, 1.0, 7.3):
        assert scaled_inv_chi2_logpdf(x, 0.1, 10.0) == pytest.approx(
            invgamma.logpdf(x, 0.05, scale=0.5), rel=1e-12)
        assert scaled_inv_chi2_logpdf(x, 3.0, 2.0) == pytest.approx(
            invgamma.logpdf(x, 1.5, scale=3.0), rel=1e-12)


def test_conjugate_posterior_flat():
    m = ConjugateNormalModel(1.0, tau02=None)
    data = ObservationSet(np.array([1.0, 2.0, 3.0]))
    mu_hat, s2 = conjugate_posterior(m, data)
    assert mu_hat == pytest.approx(2.0)
    assert s2 == pytest.approx(1.0 / 3.0)


def test_conjugate_posterior_weak_prior():
    m = ConjugateNormalModel(1.0, mu0=0.0, tau02=1e4)
    data = ObservationSet(np.array([0.5, 1.5]))
    mu_hat, s2 = conjugate_posterior(m, data)
    assert mu_hat == pytest.approx(2.0 / 2.0001, rel=1e-12)
    assert s2 == pytest.approx(1.0 / 2.0001, rel=1e-12)


def test_conjugate_posterior_strong_prior_shrinks():
    m = ConjugateNormalModel(1.0, mu0=0.0, tau02=0.25)
    data = ObservationSet(np.array([4.0, 4.0]))
    mu_hat, s2 = conjugate_posterior(m, data)
    # precision 4 + 2, mean pulled toward the prior mean 0
    assert mu_hat == pytest.approx(8.0 / 6.0, rel=1e-12)
    assert s2 == pytest.approx(1.0 / 6.0, rel=1e-12)
    assert abs(mu_hat) < 4.0


def test_posterior_variance_monotone():
    rng = np.random.default_rng(7)
    y10 = rng.standard_normal(10)
    y50 = np.concatenate([y10, rng.standard_normal(40)])
    m = ConjugateNormalModel(1.0, tau02=4.0)
    _, s2_small = conjugate_posterior(m, ObservationSet(y10))
    _, s2_big = conjugate_posterior(m, ObservationSet(y50))
    assert s2_big < s2_small
    m_tight = ConjugateNormalModel(1.0, tau02=0.5)
    _, s2_tight = conjugate_posterior(m_tight, ObservationSet(y10))
    assert s2_tight < s2_small


def test_posterior_mean_convex_combination():
    rng = np.random.default_rng(8)
    y = rng.standard_normal(20) + 3.0
    m = ConjugateNormalModel(2.0, mu0=-1.0, tau02=0.7)
    data = ObservationSet(y)
    mu_hat, _ = conjugate_posterior(m, data)
    w = (1.0 / m.tau02) / (1.0 / m.tau02 + data.n / m.sigma_A2)
    assert mu_hat == pytest.approx(w * m.mu0 + (1 - w) * np.mean(y), rel=1e-12)
    lo, hi = sorted([m.mu0, float(np.mean(y))])
    assert lo <= mu_hat <= hi


def test_normal_logpost_is_quadratic_with_mode_at_mu_hat():
    m = ConjugateNormalModel(1.3, mu0=0.4, tau02=0.9)
    data = ObservationSet(np.array([0.2, 1.1, -0.6, 2.2]))
    grid = np.linspace(-3, 3, 9)
    vals = np.array([logpost_unnorm(m, data, [t]) for t in grid])
    second = np.diff(vals, 2)
    np.testing.assert_allclose(second, second[0], rtol=1e-9)
    # argmax of the fitted parabola equals the conjugate posterior mean
    coeffs = np.polyfit(grid, vals, 2)
    mu_hat, _ = conjugate_posterior(m, data)
    assert -coeffs[1] / (2 * coeffs[0]) == pytest.approx(mu_hat, abs=1e-10)


def test_hier_loglik_group_permutation_invariant():
    trials = np.array([50, 30, 70, 40])
    m = HierLogitModel(trials)
    y = np.array([20.0, 11.0, 60.0, 5.0])
    beta = np.array([0.1, -0.5, 1.2, -1.8])
    theta = np.concatenate([beta, [0.2, 1.5]])
    base = loglik_total(m, ObservationSet(y, trials), theta)
    perm = np.array([2, 0, 3, 1])
    m2 = HierLogitModel(trials[perm])
    theta2 = np.concatenate([beta[perm], [0.2, 1.5]])
    permuted = loglik_total(m2, ObservationSet(y[perm], trials[perm]), theta2)
    assert permuted == pytest.approx(base, rel=1e-12)
    assert logpost_unnorm(m2, ObservationSet(y[perm], trials[perm]), theta2) == \
        pytest.approx(logpost_unnorm(m, ObservationSet(y, trials), theta), rel=1e-12)


def test_hier_support_and_validation():
    m = HierLogitModel(np.full(3, 10))
    assert not m.in_support(np.array([0.0, 0.0, 0.0, 0.0, -1.0]))
    assert m.in_support(np.array([0.0, 0.0, 0.0, 0.0, 1.0]))
    with pytest.raises(ValidationError):
        m.validate_data(ObservationSet(np.array([1.0, 2.0, 3.0])))
    with pytest.raises(ValidationError):
        m.validate_data(ObservationSet(np.array([1.0, 2.0]), np.array([10, 10])))


def test_model_definition_wraps_callables():
    # normal location model with unit variance via the programmatic interface
    def loglik_i(theta, i, data):
        return float(norm.logpdf(data.y[i], theta[0], 1.0))

    md = ModelDefinition(p=1, loglik_i_fn=loglik_i, logprior_fn=lambda t: 0.0,
                         prior_proper=False)
    data = ObservationSet(np.array([1.0, -1.0]))
    assert loglik_total(md, data, [0.0]) == pytest.approx(-math.log(2 * math.pi) - 1.0)
    assert not md.has_analytic_derivatives


def test_loglik_total_reports_offending_index():
    def loglik_i(theta, i, data):
        return float("nan") if i == 1 else 0.0

    md = ModelDefinition(p=1, loglik_i_fn=loglik_i, logprior_fn=lambda t: 0.0)
    data = ObservationSet(np.array([1.0, 2.0, 3.0]))
    with pytest.raises(Exception, match="observation 1"):
        loglik_total(md, data, [0.0])
