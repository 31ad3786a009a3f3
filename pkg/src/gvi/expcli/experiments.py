"""The experiments.  Each takes (parameters, seed) and returns result rows
``(param, param_value, metric, value)`` for one replicate."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .. import bbgvi, expfam, oracle
from .. import divergence as dv
from .. import problem as pb
from .. import scoring as sc
from ..divergence import DivergenceSpec
from ..errors import NoClosedForm
from ..scoring import LossSpec, Score
from .config import parse_divergence, parse_score

Row = tuple  # (param, param_value, metric, value)


def divergence_from_text(text: str) -> DivergenceSpec:
    kind, value = parse_divergence(text)
    return DivergenceSpec(kind, value)


def score_from_text(text: str) -> Score:
    kind, value = parse_score(text)
    return Score(kind, value)


# ---------------------------------------------------------------------------
# regression with two correlated predictors


def regression_data(p: dict, seed: int):
    rng = np.random.default_rng(seed)
    rho = p["rho"]
    X = rng.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]], p["n"])
    y = X @ np.asarray(p["theta"], dtype=float) + math.sqrt(p["noise_var"]) * rng.standard_normal(p["n"])
    return X, y


def _regression_fit(spec: DivergenceSpec, prior, X, y):
    model = sc.GaussianLinear()
    prob = pb.GviProblem(LossSpec(model, Score.neglog()), spec, prior, prior.kind, y, X)
    exact = pb.conjugate_posterior(model, prior, y, X)
    start = np.concatenate([exact.mean, np.log(np.diag(exact.scale)), np.log([exact.a, exact.b])])
    return pb.solve(prob, start), exact


def blr_marginals(p: dict, seed: int) -> list[Row]:
    X, y = regression_data(p, seed)
    prior = expfam.nig(p["prior_mu"], p["prior_V"], p["prior_a"], p["prior_b"])
    rows: list[Row] = []
    specs = [DivergenceSpec.kld()] + [DivergenceSpec(p["divergence"], h) for h in p["alpha_grid"]]
    exact = None
    for spec in specs:
        res, exact = _regression_fit(spec, prior, X, y)
        sd = np.sqrt(expfam.marginal_variance(res.q))
        mean = expfam.theta_mean(res.q)
        label = spec.label()
        rows += [
            ("divergence", label, "sd_theta1", sd[0]),
            ("divergence", label, "sd_theta2", sd[1]),
            ("divergence", label, "mean_theta1", mean[0]),
            ("divergence", label, "mean_theta2", mean[1]),
            ("divergence", label, "objective", res.value),
        ]
    rows += [
        ("divergence", "exact", "sd_theta1", exact.marginal_sd[0]),
        ("divergence", "exact", "sd_theta2", exact.marginal_sd[1]),
        ("divergence", "exact", "mean_theta1", exact.mean[0]),
        ("divergence", "exact", "mean_theta2", exact.mean[1]),
    ]
    return rows


def prior_sweep(p: dict, seed: int) -> list[Row]:
    X, y = regression_data(p, seed)
    rows: list[Row] = []
    specs = [DivergenceSpec.kld()] + [DivergenceSpec(p["divergence"], h) for h in p["alpha_grid"]]
    for spec in specs:
        label = spec.label()
        means = []
        for mu in p["mu_grid"]:
            second = mu if p["shift"] == "all" else 0.0
            prior = expfam.nig([mu, second], [p["prior_V"], p["prior_V"]], p["prior_a"], p["prior_b"])
            res, _ = _regression_fit(spec, prior, X, y)
            means.append(float(expfam.theta_mean(res.q)[0]))
            rows.append(("mu_prior", mu, f"mean_theta1[{label}]", means[-1]))
        rows.append(("divergence", label, "mean_range", max(means) - min(means)))
    return rows


# ---------------------------------------------------------------------------
# location model


def consistency(p: dict, seed: int) -> list[Row]:
    rng = np.random.default_rng(seed)
    sizes = p["n_grid"]
    noise = rng.standard_normal(max(sizes))
    model = sc.GaussianMean(p["noise_var"])
    prior = expfam.normal(p["prior_mean"], p["prior_var"])
    rows: list[Row] = []
    for n in sizes:
        x = p["theta_star"] + math.sqrt(p["noise_var"]) * noise[:n]
        start = expfam.to_kappa(pb.conjugate_posterior(model, prior, x))
        for text in p["divergences"]:
            spec = divergence_from_text(text)
            prob = pb.GviProblem(LossSpec(model, Score.neglog()), spec, prior, prior.kind, x)
            q = pb.solve(prob, start).q
            mu, var = q.params
            rows.append(("n", n, f"abs_error[{spec.label()}]", abs(mu[0] - p["theta_star"])))
            rows.append(("n", n, f"posterior_sd[{spec.label()}]", math.sqrt(var[0])))
    return rows


def contaminated_sample(p: dict, rng: np.random.Generator) -> np.ndarray:
    sd = math.sqrt(p["noise_var"])
    n = p["n"]
    centre = np.where(rng.random(n) < p["eps"], p["theta_star"] + p["outlier_shift"] * sd, p["theta_star"])
    return centre + sd * rng.standard_normal(n)


def contamination(p: dict, seed: int) -> list[Row]:
    x = contaminated_sample(p, np.random.default_rng(seed))
    model = sc.GaussianMean(p["noise_var"])
    prior = expfam.normal(p["prior_mean"], p["prior_var"])
    rows: list[Row] = []
    for score in [Score.neglog()] + [Score.gamma(g) for g in p["gamma_grid"]]:
        q = pb.posterior_for(model, prior, x, LossSpec(model, score))
        mean = expfam.theta_mean(q)[0]
        rows.append(("score", score.label(), "abs_error", abs(mean - p["theta_star"])))
        rows.append(("score", score.label(), "predictive_mean", mean))
    return rows


def influence(p: dict, seed: int) -> list[Row]:
    rng = np.random.default_rng(seed)
    sd = math.sqrt(p["noise_var"])
    x = sd * rng.standard_normal(p["n"])
    centre = float(x.mean())
    model = sc.GaussianMean(p["noise_var"])
    prior = expfam.normal(p["prior_mean"], p["prior_var"])
    rows: list[Row] = []
    for text in p["scores"]:
        score = score_from_text(text)
        loss = LossSpec(model, score)
        for k in p["x_grid"]:
            value = pb.influence(model, prior, x, centre + k * sd, loss)
            rows.append(("x_new_sd", k, f"influence[{score.label()}]", value))
    return rows


# ---------------------------------------------------------------------------
# two-component mixture with black-box optimization


def mixture_sample(means, sigma: float, n: int, rng: np.random.Generator) -> np.ndarray:
    first = rng.random(n) < 0.5
    return np.where(first, rng.normal(means[0], sigma, n), rng.normal(means[1], sigma, n))


def mixture_start(x: np.ndarray) -> np.ndarray:
    spread = 0.5 * x.std()
    return np.array([x.mean() - spread, x.mean() + spread, math.log(0.1), math.log(0.1)])


def mixture_minimizer(model, x: np.ndarray, resolution: int) -> np.ndarray:
    lo, hi = float(x.min()) - 1.0, float(x.max()) + 1.0
    f = lambda th: -float(sc.log_likelihood(model, th[None, :], x).sum())
    return oracle.grid_argmin(f, [(lo, hi), (lo, hi)], max(resolution, 50))


def swap_distance(mu: np.ndarray, target: np.ndarray) -> float:
    """Max-coordinate distance to ``target`` allowing the label swap."""
    return float(min(np.abs(mu - target).max(), np.abs(mu[::-1] - target).max()))


def mixture(p: dict, seed: int) -> list[Row]:
    model = sc.GaussianMixture2(p["sigma"])
    prior = expfam.diag_normal([0.0, 0.0], [p["prior_var"]] * 2)
    config = bbgvi.OptimizerConfig(
        S=p["samples"],
        max_iters=p["iterations"],
        step_size=p["step_size"],
        decay=p["decay"],
        average_tail=0.5,
        seed=seed,
    )
    rows: list[Row] = []
    for i, setting in enumerate(p["settings"]):
        tag = f"{setting[0]:g},{setting[1]:g}"
        x = mixture_sample(setting, p["sigma"], p["n"], np.random.default_rng([seed, i]))
        best = mixture_minimizer(model, x, p["grid_resolution"])
        rows.append(("setting", tag, "minimizer1", best[0]))
        rows.append(("setting", tag, "minimizer2", best[1]))
        for text in p["divergences"]:
            spec = divergence_from_text(text)
            prob = pb.GviProblem(LossSpec(model, Score.neglog()), spec, prior, prior.kind, x)
            trace = bbgvi.optimize(prob, mixture_start(x), config)
            mu = trace.kappa[:2]
            label = spec.label()
            rows.append(("setting", tag, f"mean1[{label}]", mu[0]))
            rows.append(("setting", tag, f"mean2[{label}]", mu[1]))
            rows.append(("setting", tag, f"distance[{label}]", swap_distance(mu, best)))
    return rows


# ---------------------------------------------------------------------------
# divergence-level studies


def random_bound_problem(rng: np.random.Generator, spec: DivergenceSpec, n: int) -> tuple:
    d = int(rng.integers(1, 3))
    sigma2 = float(rng.uniform(0.5, 2.0))
    model = sc.GaussianMean(sigma2, d)
    prior_var = rng.uniform(0.5, 4.0, d)
    prior = expfam.diag_normal(rng.normal(0.0, 2.0, d), prior_var)
    theta = rng.normal(0.0, 1.0, d)
    x = theta + math.sqrt(sigma2) * rng.standard_normal((n, d))
    # q no wider than the prior keeps every divergence in the grid finite
    q = expfam.diag_normal(rng.normal(0.0, 1.5, d), prior_var * rng.uniform(0.05, 1.0, d))
    prob = pb.GviProblem(LossSpec(model, Score.neglog()), spec, prior, prior.kind, x)
    return prob, expfam.to_kappa(q)


def bounds_check(p: dict, seed: int) -> list[Row]:
    rows: list[Row] = []
    for kind in p["divergences"]:
        for h in p["hyper_grid"]:
            spec = DivergenceSpec(kind, h)
            rng = np.random.default_rng([seed, p["divergences"].index(kind), p["hyper_grid"].index(h)])
            slacks = []
            for _ in range(p["configs"]):
                prob, kappa = random_bound_problem(rng, spec, p["n"])
                slacks.append(pb.bound_report(prob, kappa).slack)
            slacks = np.array(slacks)
            label = spec.label()
            rows += [
                ("divergence", label, "min_slack", slacks.min()),
                ("divergence", label, "mean_slack", slacks.mean()),
                ("divergence", label, "violations", float(np.sum(slacks < -1e-8))),
                ("divergence", label, "configs", float(slacks.size)),
            ]
    return rows


def divergence_magnitude(p: dict, seed: int) -> list[Row]:
    q = expfam.nig(p["q_mu"], p["q_V"], p["q_a"], p["q_b"])
    prior = expfam.nig(p["prior_mu"], p["prior_V"], p["prior_a"], p["prior_b"])
    rows: list[Row] = [("hyperparameter", 1.0, "kld", dv.kld_value(q, prior))]
    for kind in p["divergences"]:
        for h in p["hyper_grid"]:
            spec = DivergenceSpec(kind, h)
            try:
                value = dv.closed_form(q, prior, spec)
            except NoClosedForm:
                value = dv.mc_estimate(q, prior, spec, p["mc_samples"], seed)
            rows.append(("hyperparameter", h, kind, value.value))
            if value.std_error is not None:
                rows.append(("hyperparameter", h, f"{kind}_std_error", value.std_error))
    return rows


RUNNERS: dict[str, Callable[[dict, int], list]] = {
    "blr-marginals": blr_marginals,
    "prior-sweep": prior_sweep,
    "consistency": consistency,
    "mixture": mixture,
    "influence": influence,
    "contamination": contamination,
    "bounds-check": bounds_check,
    "divergence-magnitude": divergence_magnitude,
}
