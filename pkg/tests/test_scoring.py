import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from gvi import expfam as E
from gvi import oracle as O
from gvi import scoring as L
from gvi.errors import HyperparameterOne, InvalidParameters, NoClosedForm, UnsupportedFamily
from gvi.scoring import LossSpec, Score


def mc_expected_loss(spec, q, y, design=None, S=100_000, seed=0):
    theta = E.sample(q, S, seed)
    per = L.loss_matrix(spec, theta, y, design).sum(axis=1)
    return per.mean(), per.std(ddof=1) / math.sqrt(S)


def test_unit_variance_square_integral():
    # int N(y; 0, 1)^2 dy = 1 / (2 sqrt(pi))
    assert L.integral_term(L.GaussianMean(1.0), [0.0], 2.0) == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-14)
    assert L.integral_term(L.GaussianMean(1.0), [0.0], 2.0) == pytest.approx(0.28209479177387814, rel=1e-14)


@given(st.floats(0.1, 5), st.floats(0.2, 3))
def test_integral_matches_quadrature(s2, c):
    f = lambda y: norm.pdf(y, 0, math.sqrt(s2)) ** c
    sd = math.sqrt(s2)
    ref, _ = O.quadrature_integral(f, (-40 * sd, 40 * sd))
    assert L.integral_term(L.GaussianMean(s2), [1.3], c) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("c", [1.05, 2.0])
def test_mixture_integral_matches_quadrature(c):
    model = L.GaussianMixture2(0.65)
    th = np.array([0.0, 1.7])
    f = lambda y: math.exp(c * L.log_likelihood(model, th, [y])[0, 0])
    ref, _ = O.quadrature_integral(f, (-10, 12))
    assert L.integral_term(model, th, c) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("kind", ["beta", "gamma"])
def test_robust_scores_approach_the_log_score(kind):
    model = L.GaussianMean(1.5)
    x = np.array([[-1.0], [0.3], [4.0]])
    theta = np.array([[0.2], [1.0]])
    neg = L.loss_matrix(LossSpec(model, Score.neglog()), theta, x)
    gaps = []
    for eps in (1e-2, 1e-3):
        spec = LossSpec(model, Score(kind, 1 + eps))
        gaps.append(np.max(np.abs(L.loss_matrix(spec, theta, x) - L.limit_offset(spec) - neg)))
    # leading error term is eps * (log p)^2 / 2 per point, up to the integral factor
    assert gaps[1] <= 1e-3 * np.max(neg**2)
    assert gaps[0] / gaps[1] == pytest.approx(10, rel=0.1)


def test_beta_score_ignores_far_outliers():
    model = L.GaussianMean(1.0)
    beta = LossSpec(model, Score.beta(1.5))
    neg = LossSpec(model, Score.neglog())
    d_beta = L.loss(beta, [0.0], [9.0]) - L.loss(beta, [0.0], [8.0])
    d_neg = L.loss(neg, [0.0], [9.0]) - L.loss(neg, [0.0], [8.0])
    assert abs(d_beta) < abs(d_neg)


def abs_theta_gradient(spec, z):
    return abs(O.finite_difference_gradient(lambda t: L.loss(spec, t, [z]), np.array([0.0]))[0])


@pytest.mark.parametrize("score", [Score.beta(1.05), Score.gamma(1.05), Score.beta(1.1), Score.gamma(1.1)])
def test_robust_scores_redescend(score):
    # |d loss / d theta| peaks near |x - theta| = sigma / sqrt(c - 1), inside the grid for these c
    spec = LossSpec(L.GaussianMean(1.0), score)
    grads = [abs_theta_gradient(spec, z) for z in (2.0, 4.0, 8.0, 16.0)]
    top = int(np.argmax(grads))
    assert 0 < top < 3
    assert np.all(np.diff(grads[top:]) < 0)


def test_log_score_influence_grows_without_bound():
    spec = LossSpec(L.GaussianMean(1.0), Score.neglog())
    grads = [abs_theta_gradient(spec, z) for z in (2.0, 4.0, 8.0, 16.0)]
    np.testing.assert_allclose(grads, [2.0, 4.0, 8.0, 16.0], rtol=1e-6)


def test_robust_scores_redescend_at_moderate_hyperparameter():
    spec = LossSpec(L.GaussianMean(1.0), Score.gamma(1.5))
    d = [abs(O.finite_difference_gradient(lambda t: L.loss(spec, t, [z]), np.array([0.0]))[0]) for z in (2, 4, 8, 16)]
    assert d[0] > d[1] > d[2] > d[3]


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from([Score.beta(1.25), Score.beta(2.0), Score.gamma(1.05), Score.gamma(2.0)]),
    st.floats(-2, 2),
    st.floats(0.05, 2),
    st.floats(0.3, 3),
    st.integers(0, 2**16),
)
def test_expected_robust_loss_matches_monte_carlo(score, mu, v, s2, seed):
    model = L.GaussianMean(s2)
    q = E.normal(mu, v)
    y = np.random.default_rng(seed).normal(0, 2, size=(4, 1))
    closed = L.expected_robust_loss(q, model, score, y)
    mc, se = mc_expected_loss(LossSpec(model, score), q, y, S=40_000, seed=seed)
    assert abs(closed - mc) <= 4 * se + 1e-12


def test_gamma_exponent_convention_matches_simulation():
    # the two candidate powers of the integral term give very different values; only one agrees with MC
    model = L.GaussianMean(4.0)
    q = E.normal(0.5, 0.8)
    y = np.array([[-1.0], [0.0], [2.0]])
    score = Score.gamma(1.05)
    mc, se = mc_expected_loss(LossSpec(model, score), q, y, S=200_000, seed=1)
    good = L.expected_robust_loss(q, model, score, y, gamma_exponent="score")
    bad = L.expected_robust_loss(q, model, score, y, gamma_exponent="inverted")
    assert abs(good - mc) <= 3 * se
    assert abs(bad - mc) > 100 * se


def test_regression_expectation_matches_monte_carlo():
    model = L.GaussianLinear(sigma2=2.0)
    q = E.diag_normal([1.0, -0.5], [0.2, 0.4])
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 2))
    y = rng.normal(size=6)
    for score in (Score.beta(1.5), Score.gamma(1.5), Score.neglog()):
        spec = LossSpec(model, score)
        closed = L.expected_total_loss(spec, q, y, X)
        mc, se = mc_expected_loss(spec, q, y, X, S=100_000, seed=2)
        assert abs(closed - mc) <= 4 * se


def test_expected_neglog_with_inferred_noise_matches_monte_carlo():
    model = L.GaussianLinear()
    q = E.nig([1.0, 2.0], [0.1, 0.3], 6.0, 8.0)
    rng = np.random.default_rng(5)
    X = rng.normal(size=(8, 2))
    y = X @ [1.0, 2.0] + rng.normal(size=8)
    closed = L.expected_neglog(model, q, y, X)
    mc, se = mc_expected_loss(LossSpec(model, Score.neglog()), q, y, X, S=200_000, seed=3)
    assert abs(closed - mc) <= 4 * se


def test_expected_absolute_matches_monte_carlo():
    q = E.diag_normal([0.3, -1.0], [0.5, 2.0])
    y = np.array([[0.0, 0.0], [1.0, -2.0]])
    spec = LossSpec(L.GaussianMean(1.0, 2), Score.absolute())
    mc, se = mc_expected_loss(spec, q, y, S=200_000, seed=4)
    assert abs(L.expected_absolute(q, y) - mc) <= 4 * se


@given(st.floats(0.1, 10))
def test_loss_weight_scales_the_loss(w):
    spec = LossSpec(L.GaussianMean(1.0), Score.gamma(1.2))
    assert L.loss(spec.scaled(w), [0.3], [1.1]) == pytest.approx(w * L.loss(spec, [0.3], [1.1]), rel=1e-12)


def test_outlier_likelihood_does_not_underflow():
    spec = LossSpec(L.GaussianMean(1.0), Score.gamma(1.05))
    val = L.loss(spec, [0.0], [60.0])
    assert math.isfinite(val) and val <= 0


def test_invalid_scores_and_models():
    with pytest.raises(HyperparameterOne):
        Score.beta(1.0)
    with pytest.raises(InvalidParameters):
        Score.gamma(-1.0)
    with pytest.raises(InvalidParameters):
        Score("neglog", 2.0)
    with pytest.raises(InvalidParameters):
        L.GaussianMean(-1.0)
    with pytest.raises(NoClosedForm):
        L.limit_offset(LossSpec(L.GaussianMixture2(0.65), Score.beta(1.5)))
    with pytest.raises(UnsupportedFamily):
        L.expected_robust_loss(E.inverse_gamma(2, 2), L.GaussianMean(1.0), Score.beta(1.5), [0.0])
    with pytest.raises(InvalidParameters):
        L.expected_robust_loss(E.normal(0, 1), L.GaussianMean(1.0), Score.gamma(1.5), [0.0], gamma_exponent="other")
