import math

import numpy as np
import pytest

from gvi import bbgvi as B
from gvi import expfam as E
from gvi import oracle as O
from gvi import problem as P
from gvi import scoring as L
from gvi.divergence import DivergenceSpec as Spec
from gvi.errors import EstimatorMismatch, InvalidParameters, NonFinite
from gvi.scoring import LossSpec, Score


def location_problem(spec=Spec.kld(), score=Score.neglog(), n=20, seed=0, s2=1.0):
    x = np.random.default_rng(seed).normal(0.7, math.sqrt(s2), n)
    pi = E.normal(0.0, 1.0)
    return P.GviProblem(LossSpec(L.GaussianMean(s2), score), spec, pi, pi.kind, x)


def closed_gradient(prob, kappa):
    return O.finite_difference_gradient(lambda k: P.objective(prob, k), kappa)


def single_draw_gradients(prob, kappa, config, S, seed=0):
    # without a control variate the per-draw rows are independent one-sample gradients
    cfg = B.with_config(config, S=S, control_variate=False)
    G = B.gradient_samples(prob, kappa, cfg, np.random.default_rng(seed)).per_draw
    return G.mean(axis=0), G.std(axis=0, ddof=1) / math.sqrt(S)


def averaged_gradient(prob, kappa, config, reps, seed=0):
    rng = np.random.default_rng(seed)
    G = np.array([B.gradient_samples(prob, kappa, config, rng).gradient for _ in range(reps)])
    return G.mean(axis=0), G.std(axis=0, ddof=1) / math.sqrt(reps)


def test_estimator_resolution():
    prob = location_problem()
    k = np.array([0.0, 0.0])
    assert B.resolve_estimator(prob, k, "auto") == "closed"
    with pytest.raises(EstimatorMismatch):
        B.resolve_estimator(prob.with_divergence(Spec.renyi(0.5)), k, "expectation")
    wide = prob.with_divergence(Spec.renyi(3.0))
    assert B.resolve_estimator(wide, [0.0, math.log(10.0)], "auto") == "biased_tau"
    with pytest.raises(EstimatorMismatch):
        B.resolve_estimator(wide, [0.0, math.log(10.0)], "closed")
    alpha_wide = prob.with_divergence(Spec.alpha(3.0))
    assert B.resolve_estimator(alpha_wide, [0.0, math.log(10.0)], "auto") == "expectation"


@pytest.mark.parametrize(
    "spec,estimator", [(Spec.kld(), "closed"), (Spec.kld(), "expectation"), (Spec.alpha(0.5), "expectation"), (Spec.beta(1.5), "expectation")]
)
def test_gradients_are_unbiased(spec, estimator):
    prob = location_problem(spec)
    kappa = np.array([0.3, math.log(0.2)])
    cfg = B.OptimizerConfig(estimator=estimator)
    mean, se = single_draw_gradients(prob, kappa, cfg, 100_000)
    assert np.all(np.abs(mean - closed_gradient(prob, kappa)) <= 4 * se)


def test_leave_one_out_control_variate_keeps_gradients_unbiased():
    prob = location_problem()
    kappa = np.array([0.3, math.log(0.2)])
    cfg = B.OptimizerConfig(estimator="expectation", S=8, control_variate=True)
    mean, se = averaged_gradient(prob, kappa, cfg, 5_000)
    assert np.all(np.abs(mean - closed_gradient(prob, kappa)) <= 4 * se)


def test_self_normalized_estimator_is_consistent():
    prob = location_problem(Spec.renyi(0.5))
    kappa = np.array([0.3, math.log(0.2)])
    cfg = B.OptimizerConfig(estimator="biased_tau", S=200_000, control_variate=False)
    est = B.gradient_samples(prob, kappa, cfg, np.random.default_rng(1))
    se = np.sqrt(est.variance / cfg.S)
    assert np.all(np.abs(est.gradient - closed_gradient(prob, kappa)) <= 4 * se + 1e-3)


def test_control_variate_reduces_variance():
    prob = location_problem()
    kappa = np.array([0.3, math.log(0.2)])
    on = B.gradient_samples(prob, kappa, B.OptimizerConfig(S=64, control_variate=True), np.random.default_rng(3))
    off = B.gradient_samples(prob, kappa, B.OptimizerConfig(S=64, control_variate=False), np.random.default_rng(3))
    assert np.all(on.variance < off.variance)
    assert np.any(on.cv_scale != 0) and np.all(off.cv_scale == 0)


def test_minibatch_gradient_is_unbiased():
    prob = location_problem(n=40)
    kappa = np.array([0.3, math.log(0.2)])
    full = B.OptimizerConfig(S=4, control_variate=False)
    batch = B.OptimizerConfig(S=4, K=10, control_variate=False)
    m_full, _ = single_draw_gradients(prob, kappa, full, 200_000, seed=1)
    m_batch, se = averaged_gradient(prob, kappa, batch, 8_000, seed=2)
    assert np.all(np.abs(m_batch - m_full) <= 5 * se)


def test_rao_blackwellized_gradient_is_unbiased_with_lower_variance():
    x = np.random.default_rng(0).normal(0.5, 1.0, size=(15, 2))
    pi = E.diag_normal([0.0, 0.0], [1.0, 1.0])
    prob = P.GviProblem(LossSpec(L.GaussianMean(1.0, 2), Score.neglog()), Spec.kld(), pi, pi.kind, x)
    kappa = np.array([0.2, 0.4, math.log(0.3), math.log(0.1)])
    rb = B.OptimizerConfig(rao_blackwell=True)
    m_rb, se_rb = single_draw_gradients(prob, kappa, rb, 100_000)
    m_plain, se_plain = single_draw_gradients(prob, kappa, B.OptimizerConfig(), 100_000)
    assert np.all(np.abs(m_rb - closed_gradient(prob, kappa)) <= 4 * se_rb)
    assert np.all(se_rb <= se_plain)


def test_rao_blackwell_needs_a_factorized_loss():
    prob = location_problem(score=Score.gamma(1.5))
    with pytest.raises(InvalidParameters):
        B.gradient_samples(prob, [0.0, 0.0], B.OptimizerConfig(rao_blackwell=True), np.random.default_rng(0))


def test_optimization_is_deterministic():
    prob = location_problem()
    cfg = B.OptimizerConfig(S=8, max_iters=200, seed=5)
    a = B.optimize(prob, [0.0, 0.0], cfg)
    b = B.optimize(prob, [0.0, 0.0], cfg)
    np.testing.assert_array_equal(a.kappa, b.kappa)
    assert [r.objective for r in a.records] == [r.objective for r in b.records]
    c = B.optimize(prob, [0.0, 0.0], B.with_config(cfg, seed=6))
    assert not np.array_equal(a.kappa, c.kappa)


def test_optimizer_reaches_the_conjugate_posterior():
    prob = location_problem()
    exact = P.conjugate_posterior(prob.loss.model, prob.prior, prob.data)
    cfg = B.OptimizerConfig(S=16, max_iters=3000, step_size=0.05, decay=0.005, average_tail=0.5, seed=0)
    trace = B.optimize(prob, [0.0, 0.0], cfg)
    mu, v = exact.params
    q = prob.q(trace.kappa)
    assert abs(q.params[0][0] - mu[0]) <= 0.05 * math.sqrt(v[0])
    assert abs(math.sqrt(q.params[1][0] / v[0]) - 1) <= 0.05


def test_patience_stops_a_converged_run():
    prob = location_problem()
    exact = E.to_kappa(P.conjugate_posterior(prob.loss.model, prob.prior, prob.data))
    cfg = B.OptimizerConfig(S=4, max_iters=500, step_size=1e-9, patience=20)
    trace = B.optimize(prob, exact, cfg)
    assert trace.reason == "converged" and len(trace.records) == 20


def test_non_finite_gradients_are_reported(monkeypatch):
    prob = location_problem()
    monkeypatch.setattr(L, "loss_matrix", lambda *a, **k: np.full((16, 20), np.nan))
    with pytest.raises(NonFinite) as info:
        B.gradient_step(prob, [0.0, 0.0], B.OptimizerConfig(), 3)
    assert info.value.iteration == 3


def test_invalid_configs():
    with pytest.raises(InvalidParameters):
        B.OptimizerConfig(estimator="magic")
    with pytest.raises(InvalidParameters):
        B.OptimizerConfig(S=0)
    with pytest.raises(InvalidParameters):
        B.OptimizerConfig(average_tail=1.0)


def test_noise_variance_search_matches_grid_search():
    x = np.random.default_rng(4).normal(1.0, 1.7, 40)
    pi = E.normal(0.0, 10.0)

    def make(s2):
        return P.GviProblem(LossSpec(L.GaussianMean(s2), Score.neglog()), Spec.kld(), pi, pi.kind, x)

    def inner(prob):
        r = P.solve(prob)
        return r.kappa, r.value

    res = B.optimize_noise_variance(make, inner, (0.1, 20.0), tol=1e-6)
    grid = O.grid_argmin(lambda z: inner(make(math.exp(z[0])))[1], [(math.log(0.1), math.log(20.0))], 60)
    cell = O.grid_cell([(math.log(0.1), math.log(20.0))], 60)[0]
    assert abs(math.log(res.sigma2) - grid[0]) <= cell
