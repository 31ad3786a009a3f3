"""Losses l(theta, x): negative log score, robust beta/gamma scores, absolute loss.

For a likelihood p(x | theta) and c = beta or gamma the robust scores are

    beta:   -p^(c-1) / (c-1) + I(c) / c
    gamma:  -c / (c-1) * p^(c-1) * I(c)^(-(c-1)/c)

with I(c) = int p(y | theta)^c dy.  Both are evaluated from log p so that
tiny likelihood values of outliers do not underflow to garbage.  As c -> 1
each score approaches -log p up to an additive constant, see
:func:`limit_offset`.

Closed-form expectations under a diagonal normal q over theta use

    E_q[p(y | theta)^c] = (2 pi s2)^(-c/2) (1 + c v / s2)^(-1/2)
                          * exp(-c (y - m)^2 / (2 (s2 + c v)))

per coordinate, where m and v are the mean and variance of the predicted
location under q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import digamma, logsumexp, ndtr

from .errors import HyperparameterOne, InvalidParameters, NoClosedForm, UnsupportedFamily
from .expfam import LOG_2PI, ExpFamDistribution

# ---------------------------------------------------------------------------
# likelihood models


@dataclass(frozen=True)
class GaussianMean:
    """x ~ N(theta, sigma2 I_d); theta is the d-dimensional mean."""

    sigma2: float
    d: int = 1

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise InvalidParameters("sigma2 must be positive")
        if self.d < 1:
            raise InvalidParameters("d must be at least 1")


@dataclass(frozen=True)
class GaussianLinear:
    """y ~ N(X theta, sigma2).

    With ``sigma2=None`` the noise variance is a parameter: draws are
    ``(theta_1..theta_d, sigma2)`` as produced by a normal-inverse-gamma q.
    """

    sigma2: Optional[float] = None

    def __post_init__(self):
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise InvalidParameters("sigma2 must be positive")

    @property
    def infers_sigma2(self) -> bool:
        return self.sigma2 is None


@dataclass(frozen=True)
class GaussianMixture2:
    """x ~ 0.5 N(mu_1, sigma^2) + 0.5 N(mu_2, sigma^2); theta = (mu_1, mu_2)."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameters("sigma must be positive")


LikelihoodModel = Union[GaussianMean, GaussianLinear, GaussianMixture2]

SCORES = ("neglog", "beta", "gamma", "absolute")


@dataclass(frozen=True)
class Score:
    kind: str
    param: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SCORES:
            raise InvalidParameters(f"unknown score {self.kind!r}")
        if self.kind in ("beta", "gamma"):
            if self.param is None or not math.isfinite(self.param) or self.param <= 0:
                raise InvalidParameters(f"{self.kind} score needs a positive hyperparameter")
            if self.param == 1.0:
                raise HyperparameterOne(f"{self.kind} score with hyperparameter 1 is the log score")
            object.__setattr__(self, "param", float(self.param))
        elif self.param is not None:
            raise InvalidParameters(f"{self.kind} takes no hyperparameter")

    @classmethod
    def neglog(cls):
        return cls("neglog")

    @classmethod
    def beta(cls, b: float):
        return cls("beta", b)

    @classmethod
    def gamma(cls, g: float):
        return cls("gamma", g)

    @classmethod
    def absolute(cls):
        return cls("absolute")

    def label(self) -> str:
        return self.kind if self.param is None else f"{self.kind}({self.param:g})"


@dataclass(frozen=True)
class LossSpec:
    model: LikelihoodModel
    score: Score
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise InvalidParameters("loss weight must be positive")
        if self.score.kind == "absolute" and not isinstance(self.model, GaussianMean):
            raise InvalidParameters("absolute loss is defined for the location model only")

    def scaled(self, w: float) -> "LossSpec":
        return LossSpec(self.model, self.score, self.weight * w)


# ---------------------------------------------------------------------------
# data handling


def as_observations(model: LikelihoodModel, x) -> np.ndarray:
    """Observations as an (n, k) matrix: k = d for the location model, 1 otherwise."""
    x = np.asarray(x, dtype=float)
    k = model.d if isinstance(model, GaussianMean) else 1
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, k) if k > 1 or x.size > 0 else x.reshape(0, k)
    if x.shape[1] != k:
        raise InvalidParameters(f"observations must have {k} columns, got {x.shape[1]}")
    return x


def _draws(theta) -> np.ndarray:
    return np.atleast_2d(np.asarray(theta, dtype=float))


def _noise_var(model: LikelihoodModel, theta: np.ndarray) -> np.ndarray:
    """Noise variance per draw, shape (S, 1)."""
    if isinstance(model, GaussianLinear) and model.infers_sigma2:
        return theta[:, -1:]
    if isinstance(model, GaussianMixture2):
        return np.full((theta.shape[0], 1), model.sigma**2)
    return np.full((theta.shape[0], 1), model.sigma2)


def log_likelihood(model: LikelihoodModel, theta, x, design=None) -> np.ndarray:
    """log p(x_i | theta_s) as an (S, n) matrix."""
    th = _draws(theta)
    obs = as_observations(model, x)
    if isinstance(model, GaussianMean):
        if th.shape[1] != model.d:
            raise InvalidParameters(f"theta must have {model.d} entries")
        sq = ((obs[None, :, :] - th[:, None, :]) ** 2).sum(axis=2)
        return -0.5 * model.d * (LOG_2PI + math.log(model.sigma2)) - sq / (2.0 * model.sigma2)
    if isinstance(model, GaussianLinear):
        X = _design(design, obs.shape[0])
        d = X.shape[1]
        coef = th[:, :d]
        s2 = _noise_var(model, th)
        if np.any(s2 <= 0):
            raise InvalidParameters("noise variance must be positive")
        resid = obs[:, 0][None, :] - coef @ X.T
        return -0.5 * (LOG_2PI + np.log(s2)) - resid**2 / (2.0 * s2)
    s2 = model.sigma**2
    comp = [
        -0.5 * (LOG_2PI + math.log(s2)) - (obs[:, 0][None, :] - th[:, j : j + 1]) ** 2 / (2.0 * s2)
        for j in (0, 1)
    ]
    return np.logaddexp(comp[0], comp[1]) - math.log(2.0)


def _design(design, n: int) -> np.ndarray:
    if design is None:
        raise InvalidParameters("the regression model needs a design matrix")
    X = np.atleast_2d(np.asarray(design, dtype=float))
    if X.shape[0] != n:
        raise InvalidParameters("design rows must match the number of observations")
    return X


# ---------------------------------------------------------------------------
# integral term

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(400)


def _mixture_log_integral(model: GaussianMixture2, c: float, theta: np.ndarray) -> np.ndarray:
    # the integral depends only on |mu_1 - mu_2|; Gauss-Legendre on a box of +-12 sd
    sig = model.sigma
    gap = np.abs(theta[:, 0] - theta[:, 1])
    lo = -12.0 * sig
    hi = gap + 12.0 * sig
    half = 0.5 * (hi - lo)
    y = lo + half[:, None] * (_GL_NODES[None, :] + 1.0)
    e1 = -(y**2) / (2.0 * sig**2)
    e2 = -((y - gap[:, None]) ** 2) / (2.0 * sig**2)
    lp = np.logaddexp(e1, e2) - math.log(2.0) - 0.5 * (LOG_2PI + 2.0 * math.log(sig))
    return logsumexp(c * lp + np.log(_GL_WEIGHTS)[None, :], axis=1) + np.log(half)


def log_integral(model: LikelihoodModel, c: float, theta=None) -> np.ndarray:
    """log int p(y | theta)^c dy, one entry per draw (a scalar array if theta is None)."""
    if c <= 0:
        raise InvalidParameters("c must be positive")
    th = None if theta is None else _draws(theta)
    if isinstance(model, GaussianMixture2):
        if th is None:
            raise InvalidParameters("the mixture integral depends on theta")
        return _mixture_log_integral(model, c, th)
    dim = model.d if isinstance(model, GaussianMean) else 1
    if isinstance(model, GaussianLinear) and model.infers_sigma2:
        if th is None:
            raise InvalidParameters("the integral depends on the sampled noise variance")
        s2 = th[:, -1]
    else:
        s2 = np.full(1 if th is None else th.shape[0], model.sigma2)
    return -0.5 * dim * (c - 1.0) * (LOG_2PI + np.log(s2)) - 0.5 * dim * math.log(c)


def integral_term(model: LikelihoodModel, theta, c: float) -> float:
    """int p(y | theta)^c dy for a single parameter value."""
    return float(np.exp(log_integral(model, c, theta))[0])


# ---------------------------------------------------------------------------
# losses


def loss_matrix(spec: LossSpec, theta, x, design=None) -> np.ndarray:
    """Weighted loss l(theta_s, x_i) as an (S, n) matrix."""
    th = _draws(theta)
    sc = spec.score
    if sc.kind == "absolute":
        obs = as_observations(spec.model, x)
        out = np.abs(obs[None, :, :] - th[:, None, :]).sum(axis=2)
        return spec.weight * out
    ll = log_likelihood(spec.model, th, x, design)
    if sc.kind == "neglog":
        out = -ll
    else:
        c = sc.param
        log_i = log_integral(spec.model, c, th)[:, None]
        if sc.kind == "beta":
            out = -np.exp((c - 1.0) * ll) / (c - 1.0) + np.exp(log_i) / c
        else:
            out = -(c / (c - 1.0)) * np.exp((c - 1.0) * ll - ((c - 1.0) / c) * log_i)
    return spec.weight * out


def loss(spec: LossSpec, theta, x, design_row=None) -> float:
    """Loss for one parameter value and one observation."""
    design = None if design_row is None else np.atleast_2d(design_row)
    th = np.atleast_1d(np.asarray(theta, dtype=float))[None, :]
    obs = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(spec.model, GaussianMean):
        obs = obs[None, :]
    return float(loss_matrix(spec, th, obs, design)[0, 0])


def limit_offset(spec: LossSpec) -> float:
    """Theta-independent constant with loss - offset -> -log p as the hyperparameter -> 1.

    The beta score carries the integral term, constant in theta only for
    fixed-variance Gaussian models.
    """
    sc = spec.score
    if sc.kind in ("neglog", "absolute"):
        return 0.0
    c = sc.param
    if sc.kind == "gamma":
        return spec.weight * (-c / (c - 1.0))
    if isinstance(spec.model, GaussianMixture2) or (
        isinstance(spec.model, GaussianLinear) and spec.model.infers_sigma2
    ):
        raise NoClosedForm("beta-score offset depends on theta for this model")
    i_c = float(np.exp(log_integral(spec.model, c))[0])
    return spec.weight * (-1.0 / (c - 1.0) + i_c / c)


# ---------------------------------------------------------------------------
# closed-form expectations under a diagonal normal q

GAMMA_EXPONENT_CONVENTIONS = ("score", "inverted")


def _predictive_moments(model: LikelihoodModel, q: ExpFamDistribution, obs: np.ndarray, design):
    """Mean and variance of the predicted location per observation and coordinate."""
    if not q.kind.is_normal:
        raise UnsupportedFamily("closed-form expectations need a diagonal normal q")
    mu, v = q.params
    if isinstance(model, GaussianMean):
        if q.kind.d != model.d:
            raise InvalidParameters("q dimension must match the model")
        return np.broadcast_to(mu, obs.shape), np.broadcast_to(v, obs.shape)
    if isinstance(model, GaussianLinear):
        if model.infers_sigma2:
            raise UnsupportedFamily("inferred noise variance needs a normal-inverse-gamma q")
        X = _design(design, obs.shape[0])
        if X.shape[1] != q.kind.d:
            raise InvalidParameters("design columns must match q dimension")
        return (X @ mu)[:, None], ((X * X) @ v)[:, None]
    raise NoClosedForm("no closed-form expectation for the mixture model")


def log_expected_power(model: LikelihoodModel, q: ExpFamDistribution, c: float, y, design=None) -> np.ndarray:
    """log E_q[p(y_i | theta)^c] per observation."""
    obs = as_observations(model, y)
    m, s = _predictive_moments(model, q, obs, design)
    s2 = model.sigma2
    if np.any(1.0 + c * s / s2 <= 0):
        raise NoClosedForm("expected power diverges")
    per = (
        -0.5 * c * (LOG_2PI + math.log(s2))
        - 0.5 * np.log1p(c * s / s2)
        - c * (obs - m) ** 2 / (2.0 * (s2 + c * s))
    )
    return per.sum(axis=1)


def expected_robust_loss(
    q: ExpFamDistribution,
    model: LikelihoodModel,
    score: Score,
    y,
    design=None,
    gamma_exponent: str = "score",
) -> float:
    """E_q[l(theta, y)] summed over the rows of y for beta or gamma scores.

    ``gamma_exponent`` selects the power of the integral term: ``"score"``
    uses I^(-(c-1)/c), the form matching the pointwise score; ``"inverted"``
    uses I^(-c/(c-1)) and exists only so the two candidates can be compared.
    """
    if not q.kind.is_normal:
        raise UnsupportedFamily("closed-form robust expectations need a diagonal normal q")
    if score.kind not in ("beta", "gamma"):
        raise InvalidParameters("expected_robust_loss handles beta and gamma scores")
    c = score.param
    log_e = log_expected_power(model, q, c - 1.0, y, design)
    log_i = float(log_integral(model, c)[0])
    if score.kind == "beta":
        return float(np.sum(-np.exp(log_e) / (c - 1.0) + math.exp(log_i) / c))
    if gamma_exponent == "score":
        power = -(c - 1.0) / c
    elif gamma_exponent == "inverted":
        power = -c / (c - 1.0)
    else:
        raise InvalidParameters(f"unknown exponent convention {gamma_exponent!r}")
    return float(np.sum(-(c / (c - 1.0)) * np.exp(log_e + power * log_i)))


def expected_neglog(model: LikelihoodModel, q: ExpFamDistribution, y, design=None) -> float:
    """E_q[-sum_i log p(y_i | theta)] in closed form."""
    obs = as_observations(model, y)
    n = obs.shape[0]
    if isinstance(model, GaussianLinear) and model.infers_sigma2:
        if q.kind.name != "nig":
            raise UnsupportedFamily("inferred noise variance needs a normal-inverse-gamma q")
        X = _design(design, n)
        mu, V, a, b = q.params
        resid = obs[:, 0] - X @ mu
        return float(
            0.5 * n * LOG_2PI
            + 0.5 * n * (math.log(b) - digamma(a))
            + 0.5 * (a / b) * np.sum(resid**2)
            + 0.5 * np.sum((X * X) @ V)
        )
    m, s = _predictive_moments(model, q, obs, design)
    s2 = model.sigma2
    k = obs.shape[1]
    return float(0.5 * n * k * (LOG_2PI + math.log(s2)) + np.sum((obs - m) ** 2 + s) / (2.0 * s2))


def expected_absolute(q: ExpFamDistribution, y) -> float:
    """E_q[sum_i |theta - y_i|_1] for a diagonal normal q."""
    if not q.kind.is_normal:
        raise UnsupportedFamily("closed-form absolute loss needs a diagonal normal q")
    mu, v = q.params
    obs = np.asarray(y, dtype=float).reshape(-1, mu.size)
    sd = np.sqrt(v)
    z = (mu - obs) / sd
    # E|Z| for Z ~ N(m, s^2): s sqrt(2/pi) exp(-m^2 / 2s^2) + m (1 - 2 Phi(-m/s))
    folded = sd * math.sqrt(2.0 / math.pi) * np.exp(-0.5 * z * z) + (mu - obs) * (1.0 - 2.0 * ndtr(-z))
    return float(folded.sum())


def expected_total_loss(spec: LossSpec, q: ExpFamDistribution, x, design=None) -> float:
    """Closed-form E_q[sum_i l(theta, x_i)], including the loss weight."""
    sc = spec.score
    if sc.kind == "neglog":
        val = expected_neglog(spec.model, q, x, design)
    elif sc.kind == "absolute":
        val = expected_absolute(q, as_observations(spec.model, x))
    else:
        if isinstance(spec.model, GaussianLinear) and spec.model.infers_sigma2:
            raise NoClosedForm("robust scores with inferred noise variance have no closed form here")
        val = expected_robust_loss(q, spec.model, sc, x, design)
    return spec.weight * val


__all__ = [
    "GaussianMean",
    "GaussianLinear",
    "GaussianMixture2",
    "Score",
    "LossSpec",
    "log_likelihood",
    "log_integral",
    "integral_term",
    "loss_matrix",
    "loss",
    "limit_offset",
    "log_expected_power",
    "expected_robust_loss",
    "expected_neglog",
    "expected_absolute",
    "expected_total_loss",
]
