import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import invgamma, norm

from gvi import expfam as E
from gvi import oracle as O
from gvi.errors import InvalidParameters, OutOfSupport, OutsideNaturalSpace

means = st.floats(-5, 5)
variances = st.floats(0.05, 10)
shapes = st.floats(1.5, 30)


def test_normal_log_partition_value():
    # A(eta) for mu=2, v=4 excludes log h: log 2 + 1/2
    assert E.normal(2.0, 4.0).log_partition == pytest.approx(math.log(2.0) + 0.5, abs=1e-14)


def test_standard_normal_has_zero_log_partition():
    assert E.normal(0.0, 1.0).log_partition == pytest.approx(0.0, abs=1e-15)


@given(means, variances)
def test_normal_roundtrip(mu, v):
    d = E.normal(mu, v)
    back = E.mean_from_natural(d.kind, E.natural_from_mean(d.kind, d.mean_params))
    np.testing.assert_allclose(back, [mu, v], rtol=1e-12, atol=1e-12)


@given(st.lists(means, min_size=2, max_size=2), st.lists(variances, min_size=2, max_size=2), shapes, shapes)
def test_nig_roundtrip(mu, V, a, b):
    d = E.nig(mu, V, a, b)
    back = E.mean_from_natural(d.kind, d.natural_params)
    np.testing.assert_allclose(back, d.mean_params, rtol=1e-10, atol=1e-300)


@given(means, variances, st.floats(-8, 8))
def test_normal_log_pdf_matches_scipy(mu, v, x):
    assert E.log_pdf(E.normal(mu, v), [x]) == pytest.approx(norm.logpdf(x, mu, math.sqrt(v)), rel=1e-10, abs=1e-10)


@settings(max_examples=40)
@given(
    st.lists(means, min_size=2, max_size=2),
    st.lists(variances, min_size=2, max_size=2),
    shapes,
    shapes,
    st.lists(st.floats(-4, 4), min_size=2, max_size=2),
    st.floats(0.1, 5),
)
def test_nig_log_pdf_matches_direct_density(mu, V, a, b, theta, s2):
    d = E.nig(mu, V, a, b)
    direct = O.nig_log_density(theta, s2, mu, V, a, b)
    assert E.log_pdf(d, theta + [s2]) == pytest.approx(direct, rel=1e-9, abs=1e-9)


@given(shapes, shapes, st.floats(0.05, 20))
def test_inverse_gamma_log_pdf_matches_scipy(a, b, s2):
    assert E.log_pdf(E.inverse_gamma(a, b), [s2]) == pytest.approx(invgamma.logpdf(s2, a, scale=b), rel=1e-9, abs=1e-9)


@settings(max_examples=30)
@given(st.lists(means, min_size=1, max_size=2), st.lists(variances, min_size=2, max_size=2), shapes, shapes)
def test_gradient_of_log_partition_is_mean_statistics(mu, V, a, b):
    d = E.nig(mu, V[: len(mu)], a, b)
    g = O.finite_difference_gradient(lambda eta: E.log_partition(d.kind, eta), d.natural_params, 1e-6)
    np.testing.assert_allclose(g, E.mean_sufficient_stats(d), rtol=1e-5, atol=1e-6)


def test_normal_density_integrates_to_one():
    d = E.normal(1.0, 2.0)
    val, _ = O.quadrature_integral(lambda x: math.exp(E.log_pdf(d, [x])), (1 - 30, 1 + 30))
    assert val == pytest.approx(1.0, abs=1e-9)


@given(st.lists(means, min_size=3, max_size=3), st.lists(variances, min_size=3, max_size=3))
def test_kappa_roundtrip(mu, v):
    d = E.diag_normal(mu, v)
    np.testing.assert_allclose(E.from_kappa(d.kind, E.to_kappa(d)).mean_params, d.mean_params, rtol=1e-13)


def test_score_matches_finite_difference_of_log_pdf():
    q = E.nig([0.3, -1.0], [0.5, 2.0], 4.0, 3.0)
    k = E.to_kappa(q)
    theta = E.sample(q, 5, seed=1)
    s = E.score(q.kind, k, theta)
    for i, row in enumerate(theta):
        fd = O.finite_difference_gradient(lambda kk: E.log_pdf(E.from_kappa(q.kind, kk), row), k)
        np.testing.assert_allclose(s[i], fd, rtol=1e-6, atol=1e-7)


def test_score_has_zero_mean():
    q = E.diag_normal([1.0, -2.0], [0.5, 3.0])
    theta = E.sample(q, 200_000, seed=3)
    s = E.score(q.kind, E.to_kappa(q), theta)
    se = s.std(axis=0, ddof=1) / math.sqrt(len(s))
    assert np.all(np.abs(s.mean(axis=0)) < 4 * se)


def test_sampling_is_deterministic_per_seed():
    q = E.nig([0.0], [1.0], 3.0, 2.0)
    np.testing.assert_array_equal(E.sample(q, 10, 7), E.sample(q, 10, 7))
    assert not np.array_equal(E.sample(q, 10, 7), E.sample(q, 10, 8))


def test_nig_marginal_variance_matches_draws():
    q = E.nig([0.0, 1.0], [0.5, 2.0], 6.0, 4.0)
    theta = E.sample(q, 400_000, seed=0)[:, :2]
    np.testing.assert_allclose(theta.var(axis=0), E.marginal_variance(q), rtol=0.02)


def test_invalid_parameters_are_rejected():
    with pytest.raises(InvalidParameters):
        E.normal(0.0, -1.0)
    with pytest.raises(InvalidParameters):
        E.nig([0.0], [1.0], 0.0, 1.0)
    with pytest.raises(OutsideNaturalSpace):
        E.ExpFamDistribution.from_natural(E.FamilyKind.univariate_normal(), [0.0, 0.5])


def test_support_is_checked():
    with pytest.raises(OutOfSupport):
        E.log_pdf(E.inverse_gamma(2.0, 1.0), [-1.0])
    with pytest.raises(OutOfSupport):
        E.log_pdf(E.nig([0.0], [1.0], 2.0, 1.0), [0.0, 0.0])
    with pytest.raises(OutOfSupport):
        E.log_pdf(E.normal(0.0, 1.0), [0.0, 1.0])


def test_one_dimensional_diagonal_normal_is_the_normal_family():
    assert E.diag_normal([0.5], [2.0]).kind.same_family(E.normal(0.5, 2.0).kind)
    assert E.diag_normal([0.5], [2.0]).log_partition == pytest.approx(E.normal(0.5, 2.0).log_partition)


def test_parameters_are_read_only():
    d = E.normal(0.0, 1.0)
    with pytest.raises(ValueError):
        d.mean_params[0] = 3.0
