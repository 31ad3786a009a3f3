"""GVI problems: expected loss plus divergence to the prior over a variational family.

    objective(kappa) = E_q[sum_i l(theta, x_i)] + D(q || prior),  q = q(. | kappa)

Closed-form evaluation needs both a closed-form expected loss and a
closed-form divergence; otherwise :class:`MonteCarlo` evaluation is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from . import divergence as dv
from . import expfam, scoring
from .divergence import DivergenceSpec
from .errors import (
    FamilyMismatch,
    Infeasible,
    InvalidParameters,
    NoClosedForm,
    NonConjugate,
    UnsupportedFamily,
)
from .expfam import ExpFamDistribution, FamilyKind
from .scoring import GaussianLinear, GaussianMean, LossSpec


@dataclass(frozen=True)
class ClosedForm:
    pass


@dataclass(frozen=True)
class MonteCarlo:
    S: int
    seed: int

    def __post_init__(self):
        if self.S < 2:
            raise InvalidParameters("Monte-Carlo evaluation needs S >= 2")


Evaluation = Union[ClosedForm, MonteCarlo]


@dataclass(frozen=True, eq=False)
class GviProblem:
    loss: LossSpec
    divergence: DivergenceSpec
    prior: ExpFamDistribution
    family: FamilyKind
    data: np.ndarray
    design: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.prior.kind.same_family(self.family):
            raise FamilyMismatch("the prior must belong to the variational family")
        x = scoring.as_observations(self.loss.model, self.data)
        if x.shape[0] == 0:
            raise InvalidParameters("data must contain at least one observation")
        x.flags.writeable = False
        object.__setattr__(self, "data", x)
        model = self.loss.model
        if isinstance(model, GaussianLinear):
            if self.design is None:
                raise InvalidParameters("regression problems need a design matrix")
            X = np.atleast_2d(np.asarray(self.design, dtype=float)).copy()
            if X.shape[0] != x.shape[0]:
                raise InvalidParameters("design rows must match the number of observations")
            X.flags.writeable = False
            object.__setattr__(self, "design", X)
            want = X.shape[1] + (1 if model.infers_sigma2 else 0)
            if model.infers_sigma2 and self.family.name != "nig":
                raise UnsupportedFamily("inferring the noise variance needs a normal-inverse-gamma family")
        elif isinstance(model, GaussianMean):
            want = model.d
        else:
            want = 2
        if self.family.theta_dim != want:
            raise InvalidParameters(f"family draws have length {self.family.theta_dim}, the model needs {want}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def with_loss(self, loss: LossSpec) -> "GviProblem":
        return GviProblem(loss, self.divergence, self.prior, self.family, self.data, self.design)

    def with_divergence(self, spec: DivergenceSpec) -> "GviProblem":
        return GviProblem(self.loss, spec, self.prior, self.family, self.data, self.design)

    def with_data(self, data, design=None) -> "GviProblem":
        return GviProblem(self.loss, self.divergence, self.prior, self.family, data, design)

    def q(self, kappa) -> ExpFamDistribution:
        return expfam.from_kappa(self.family, kappa)


# ---------------------------------------------------------------------------
# evaluation


def expected_loss(problem: GviProblem, q: ExpFamDistribution) -> float:
    return scoring.expected_total_loss(problem.loss, q, problem.data, problem.design)


def loss_per_draw(problem: GviProblem, theta: np.ndarray) -> np.ndarray:
    """sum_i l(theta_s, x_i) for each draw."""
    return scoring.loss_matrix(problem.loss, theta, problem.data, problem.design).sum(axis=1)


def objective_mc(problem: GviProblem, kappa, S: int, seed: int) -> tuple[float, float]:
    """(value, standard error) of the Monte-Carlo objective."""
    q = problem.q(kappa)
    theta = expfam.sample(q, S, seed)
    total = loss_per_draw(problem, theta)
    lq = expfam.log_pdf(q, theta)
    lp = expfam.log_pdf(problem.prior, theta)
    d_value, d_terms = dv.estimate_terms(problem.divergence, lq, lp)
    value = float(total.mean() + d_value)
    se = float(np.std(total + d_terms, ddof=1) / math.sqrt(S))
    return value, se


def objective(problem: GviProblem, kappa, eval: Evaluation = ClosedForm()) -> float:
    if isinstance(eval, MonteCarlo):
        return objective_mc(problem, kappa, eval.S, eval.seed)[0]
    q = problem.q(kappa)
    return expected_loss(problem, q) + dv.closed_form(q, problem.prior, problem.divergence).value


# ---------------------------------------------------------------------------
# deterministic minimization of closed-form objectives


def _gradient(f, k: np.ndarray, rel: float = 1e-5) -> np.ndarray:
    g = np.empty_like(k)
    for i in range(k.size):
        h = rel * max(1.0, abs(k[i]))
        up, dn = k.copy(), k.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2.0 * h)
    return g


@dataclass(frozen=True)
class SolveResult:
    kappa: np.ndarray
    q: ExpFamDistribution
    value: float
    grad_norm: float


def minimize_closed_form(f, kappa0, gtol: float = 1e-9, max_iter: int = 2000) -> tuple[np.ndarray, float]:
    """Quasi-Newton minimization followed by a few guarded Newton steps."""

    def safe(k):
        try:
            v = f(k)
        except (NoClosedForm, InvalidParameters, Infeasible, FloatingPointError):
            return 1e300
        return v if np.isfinite(v) else 1e300

    k = np.asarray(kappa0, dtype=float).copy()
    res = minimize(safe, k, jac=lambda z: _gradient(safe, z), method="BFGS",
                   options={"gtol": gtol, "maxiter": max_iter})
    k, val = res.x, res.fun
    for _ in range(8):
        g = _gradient(safe, k)
        H = np.empty((k.size, k.size))
        for i in range(k.size):
            h = 1e-4 * max(1.0, abs(k[i]))
            up, dn = k.copy(), k.copy()
            up[i] += h
            dn[i] -= h
            H[:, i] = (_gradient(safe, up) - _gradient(safe, dn)) / (2.0 * h)
        H = 0.5 * (H + H.T)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if np.any(np.linalg.eigvalsh(H) <= 0):
            break
        trial = k - step
        tv = safe(trial)
        if tv > val + 1e-12 * max(1.0, abs(val)):
            break
        k, val = trial, tv
        if np.max(np.abs(step)) < 1e-12:
            break
    return k, val


def solve(problem: GviProblem, kappa0=None, gtol: float = 1e-9) -> SolveResult:
    """Minimize the closed-form objective over the variational family."""
    k0 = expfam.to_kappa(problem.prior) if kappa0 is None else np.asarray(kappa0, dtype=float)
    objective(problem, k0)  # fail fast on NoClosedForm
    k, val = minimize_closed_form(lambda z: objective(problem, z), k0, gtol)
    g = _gradient(lambda z: objective(problem, z), k)
    return SolveResult(k, problem.q(k), float(val), float(np.linalg.norm(g)))


# ---------------------------------------------------------------------------
# exact posteriors


@dataclass(frozen=True, eq=False)
class RegressionPosterior:
    """Exact posterior of conjugate Bayesian linear regression.

    theta | s2 ~ N(mean, s2 * scale) and s2 ~ IG(a, b) when the noise variance
    is inferred; theta ~ N(mean, scale) with ``a = b = None`` when it is fixed.
    """

    mean: np.ndarray
    scale: np.ndarray
    a: Optional[float] = None
    b: Optional[float] = None

    @property
    def marginal_variance(self) -> np.ndarray:
        diag = np.diag(self.scale)
        if self.a is None:
            return diag
        return diag * self.b / (self.a - 1.0)

    @property
    def marginal_sd(self) -> np.ndarray:
        return np.sqrt(self.marginal_variance)

    def log_pdf(self, theta, s2) -> float:
        """Log density of the exact NIG posterior at (theta, s2)."""
        d = self.mean.size
        r = np.asarray(theta, dtype=float) - self.mean
        _, logdet = np.linalg.slogdet(self.scale)
        quad = r @ np.linalg.solve(self.scale, r)
        return float(
            -0.5 * d * math.log(2 * math.pi * s2) - 0.5 * logdet - quad / (2 * s2)
            + self.a * math.log(self.b) - gammaln(self.a) - (self.a + 1) * math.log(s2) - self.b / s2
        )


def conjugate_posterior(model, prior: ExpFamDistribution, data, design=None):
    """Exact Bayes posterior for the conjugate pairings.

    Location model with a diagonal normal prior gives a diagonal normal;
    regression with a normal-inverse-gamma prior gives a
    :class:`RegressionPosterior` (its scale matrix is not diagonal in general).
    """
    if isinstance(model, GaussianMean) and prior.kind.is_normal:
        x = scoring.as_observations(model, data)
        if prior.kind.d != model.d:
            raise NonConjugate("prior dimension does not match the model")
        mu0, v0 = prior.params
        prec = 1.0 / v0 + x.shape[0] / model.sigma2
        mean = (mu0 / v0 + x.sum(axis=0) / model.sigma2) / prec
        return ExpFamDistribution(prior.kind, np.concatenate([mean, 1.0 / prec]))
    if isinstance(model, GaussianLinear):
        y = scoring.as_observations(model, data)[:, 0]
        X = np.atleast_2d(np.asarray(design, dtype=float))
        if model.infers_sigma2 and prior.kind.name == "nig":
            mu0, V0, a0, b0 = prior.params
            P0 = np.diag(1.0 / V0)
            Pn = P0 + X.T @ X
            Vn = np.linalg.inv(Pn)
            mn = Vn @ (P0 @ mu0 + X.T @ y)
            an = a0 + 0.5 * y.size
            bn = b0 + 0.5 * (y @ y + mu0 @ P0 @ mu0 - mn @ Pn @ mn)
            return RegressionPosterior(mn, Vn, float(an), float(bn))
        if not model.infers_sigma2 and prior.kind.is_normal:
            mu0, v0 = prior.params
            P0 = np.diag(1.0 / v0)
            Pn = P0 + X.T @ X / model.sigma2
            Vn = np.linalg.inv(Pn)
            mn = Vn @ (P0 @ mu0 + X.T @ y / model.sigma2)
            return RegressionPosterior(mn, Vn)
    raise NonConjugate(f"no conjugate update for {type(model).__name__} with a {prior.kind.name} prior")


# ---------------------------------------------------------------------------
# quasi-conjugate robust objectives


def _log_expected_power_expfam(q: ExpFamDistribution, sigma2: float, c: float, x: np.ndarray, index: int) -> float:
    """log E_q[N(x; theta, sigma2 I)^c] through the natural-parameter shift."""
    kind = q.kind
    shift = np.concatenate([c * x / sigma2, np.full(kind.d, -c / (2.0 * sigma2))])
    eta = q.natural_params + shift
    if not expfam.natural_space_member(kind, eta):
        raise Infeasible(index)
    return (
        -0.5 * kind.d * c * (expfam.LOG_2PI + math.log(sigma2))
        - c * float(x @ x) / (2.0 * sigma2)
        + expfam.log_partition(kind, eta)
        - q.log_partition
    )


def quasi_conjugate_objective(problem: GviProblem, kappa) -> float:
    """Closed-form robust-score objective for a normal location model with a KLD penalty."""
    model, sc = problem.loss.model, problem.loss.score
    if not isinstance(model, GaussianMean) or sc.kind not in ("beta", "gamma"):
        raise InvalidParameters("quasi-conjugate objectives need a beta or gamma score on the location model")
    if not problem.family.is_normal:
        raise UnsupportedFamily("quasi-conjugate objectives need a normal family")
    if problem.divergence.kind not in ("kld", "weighted_kld"):
        raise InvalidParameters("quasi-conjugate objectives use the KLD penalty")
    q = problem.q(kappa)
    c = sc.param
    s2 = model.sigma2
    log_e = np.array([_log_expected_power_expfam(q, s2, c - 1.0, xi, i) for i, xi in enumerate(problem.data)])
    log_i = -0.5 * model.d * (c - 1.0) * (expfam.LOG_2PI + math.log(s2)) - 0.5 * model.d * math.log(c)
    if sc.kind == "beta":
        total = np.sum(-np.exp(log_e) / (c - 1.0) + math.exp(log_i) / c)
    else:
        total = np.sum(-(c / (c - 1.0)) * np.exp(log_e - ((c - 1.0) / c) * log_i))
    kld = (
        problem.prior.log_partition
        - q.log_partition
        + (q.natural_params - problem.prior.natural_params) @ expfam.mean_sufficient_stats(q)
    )
    if problem.divergence.kind == "weighted_kld":
        kld /= problem.divergence.param
    return float(problem.loss.weight * total + kld)


# ---------------------------------------------------------------------------
# lower bounds in terms of a scaled ELBO


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    slack: float
    c: float
    w: float
    expected_loss: float
    divergence: float
    elbo: float
    s1: float
    prior_constant: float  # q-independent part of the divergence kept on the right-hand side
    std_error: float = 0.0


def _expected_log(q: ExpFamDistribution, p: ExpFamDistribution) -> float:
    """E_q[log p] for p in the same family."""
    return float(q.kind.log_h + p.natural_params @ expfam.mean_sufficient_stats(q) - p.log_partition)


def _log_expected_pow(q: ExpFamDistribution, p: ExpFamDistribution, c: float) -> float:
    """log E_q[p^c]."""
    return dv.log_power_integral(q, p, 1.0, c)


def bound_report(problem: GviProblem, kappa, mc_samples: int = 100_000, seed: int = 0) -> BoundReport:
    """Evaluate the objective against its scaled-ELBO lower bound.

    For hyperparameter h the bound reads
    objective >= -c(h) * ELBO^{w(h) l}(q) + S1(h, q, prior) + prior_constant
    with c = min(1, 1/h) and w = max(1, h).
    """
    spec = problem.divergence
    if spec.kind not in ("renyi", "beta", "gamma"):
        raise InvalidParameters("bounds are available for renyi, beta and gamma divergences")
    h = spec.param
    if h < 0:
        raise InvalidParameters("bounds need a positive hyperparameter")
    q = problem.q(kappa)
    pi = problem.prior
    se = 0.0
    try:
        e_loss = expected_loss(problem, q)
    except NoClosedForm:
        theta = expfam.sample(q, mc_samples, seed)
        per = loss_per_draw(problem, theta)
        e_loss = float(per.mean())
        se = float(per.std(ddof=1) / math.sqrt(mc_samples))
    div = dv.closed_form(q, pi, spec).value
    kld = dv.kld_value(q, pi)
    c, w = min(1.0, 1.0 / h), max(1.0, h)
    elbo = -(w * e_loss + kld)
    prior_constant = 0.0
    if spec.kind == "renyi":
        s1 = div - kld if h < 1 else 0.0
    elif spec.kind == "beta":
        prior_constant = math.exp(dv.log_power_integral(pi, pi, h, 0.0)) / h
        if h < 1:
            s1 = (
                math.exp(_log_expected_pow(q, q, h - 1.0)) / (h * (h - 1.0))
                - _expected_log(q, q)
                - 1.0 / (h - 1.0)
            )
        else:
            s1 = (
                _expected_log(q, pi) / h
                - math.exp(_log_expected_pow(q, pi, h - 1.0)) / (h - 1.0)
                + 1.0 / (h * (h - 1.0))
            )
    else:
        prior_constant = dv.log_power_integral(pi, pi, h, 0.0) / h
        if h < 1:
            s1 = _log_expected_pow(q, q, h - 1.0) / (h * (h - 1.0)) - _expected_log(q, q)
        else:
            s1 = _expected_log(q, pi) / h - _log_expected_pow(q, pi, h - 1.0) / (h - 1.0)
    lhs = e_loss + div
    rhs = -c * elbo + s1 + prior_constant
    return BoundReport(lhs, rhs, lhs - rhs, c, w, e_loss, div, elbo, s1, prior_constant, se)


def log_taylor_bound(Z, x):
    """(Z^x - 1) / x, which is >= log Z for x > 0 and <= log Z for x < 0."""
    Z = np.asarray(Z, dtype=float)
    if np.any(Z <= 0):
        raise InvalidParameters("Z must be positive")
    if np.any(np.asarray(x) == 0):
        raise InvalidParameters("x must be nonzero")
    return np.expm1(x * np.log(Z)) / x


# ---------------------------------------------------------------------------
# influence of a new observation


def posterior_for(model: GaussianMean, prior: ExpFamDistribution, data, loss: LossSpec) -> ExpFamDistribution:
    """Exact posterior for the log score, closed-form GVI optimum (KLD penalty) for robust scores."""
    if loss.score.kind == "neglog" and loss.weight == 1.0:
        return conjugate_posterior(model, prior, data)
    if loss.score.kind not in ("beta", "gamma", "neglog") or not prior.kind.is_normal:
        raise NonConjugate("influence needs a log, beta or gamma score with a normal prior")
    prob = GviProblem(loss, DivergenceSpec.kld(), prior, prior.kind, data)
    start = expfam.to_kappa(conjugate_posterior(model, prior, data))
    return solve(prob, start, gtol=1e-11).q


def influence(model: GaussianMean, prior: ExpFamDistribution, data, x_new, loss: LossSpec) -> float:
    """KLD(posterior with x_new || posterior without it)."""
    if not isinstance(model, GaussianMean):
        raise NonConjugate("influence is defined for the location model")
    x = scoring.as_observations(model, data)
    xn = np.atleast_1d(np.asarray(x_new, dtype=float)).reshape(1, -1)
    before = posterior_for(model, prior, x, loss)
    after = posterior_for(model, prior, np.vstack([x, xn]), loss)
    return dv.kld_value(after, before)


__all__ = [
    "ClosedForm",
    "MonteCarlo",
    "GviProblem",
    "SolveResult",
    "RegressionPosterior",
    "BoundReport",
    "objective",
    "objective_mc",
    "expected_loss",
    "loss_per_draw",
    "solve",
    "minimize_closed_form",
    "conjugate_posterior",
    "quasi_conjugate_objective",
    "bound_report",
    "log_taylor_bound",
    "posterior_for",
    "influence",
]
