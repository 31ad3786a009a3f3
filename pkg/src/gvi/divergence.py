"""Divergences D(q || p) between members of the same exponential family.

Closed forms use the power-integral identity for constant base measure

    log int q^c1 p^c2 = (c1 + c2 - 1) log h + A(c1 eta_q + c2 eta_p) - c1 A_q - c2 A_p

which is finite only if the combined natural parameter stays in the natural
space.  When it leaves it, :func:`closed_form` raises ``NotClosedForm`` and the
caller decides whether to fall back to :func:`mc_estimate`.

Every kind except the KLD is written as a combination of expectations

    m_j = E_q[ exp(a_j log q + b_j log p) ]

either linearly (``alpha``, ``beta``) or through logarithms (``renyi``,
``gamma``).  The same representation drives the Monte-Carlo estimator and the
score-function gradients used by the black-box optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import expfam
from .errors import FamilyMismatch, HyperparameterOne, InvalidParameters, NotClosedForm
from .expfam import ExpFamDistribution, FamilyKind

KINDS = ("kld", "weighted_kld", "alpha", "renyi", "beta", "gamma")
NUMERICAL_FLOOR = 1e-9


@dataclass(frozen=True)
class DivergenceSpec:
    kind: str
    param: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameters(f"unknown divergence {self.kind!r}")
        if self.kind == "kld":
            if self.param is not None:
                raise InvalidParameters("KLD takes no hyperparameter")
            return
        if self.param is None or not math.isfinite(self.param):
            raise InvalidParameters(f"{self.kind} needs a finite hyperparameter")
        object.__setattr__(self, "param", float(self.param))
        if self.kind == "weighted_kld":
            if self.param <= 0:
                raise InvalidParameters("KLD weight must be positive")
        elif self.param == 0.0:
            raise InvalidParameters(f"{self.kind} hyperparameter must not be 0")
        elif self.param == 1.0:
            raise HyperparameterOne(f"{self.kind} hyperparameter 1 is the KLD; use DivergenceSpec.kld()")

    @classmethod
    def kld(cls):
        return cls("kld")

    @classmethod
    def weighted_kld(cls, w: float):
        return cls("weighted_kld", w)

    @classmethod
    def alpha(cls, a: float):
        return cls("alpha", a)

    @classmethod
    def renyi(cls, a: float):
        return cls("renyi", a)

    @classmethod
    def beta(cls, b: float):
        return cls("beta", b)

    @classmethod
    def gamma(cls, g: float):
        return cls("gamma", g)

    @property
    def log_transformed(self) -> bool:
        return self.kind in ("renyi", "gamma")

    def label(self) -> str:
        return self.kind if self.param is None else f"{self.kind}({self.param:g})"


@dataclass(frozen=True)
class DivergenceValue:
    value: float
    path: str  # "closed_form" or "monte_carlo"
    samples: Optional[int] = None
    std_error: Optional[float] = None
    biased: bool = False  # log-of-mean estimators are consistent but biased


# ---------------------------------------------------------------------------
# closed forms


def _check_pair(q: ExpFamDistribution, p: ExpFamDistribution) -> FamilyKind:
    if not q.kind.same_family(p.kind):
        raise FamilyMismatch(f"cannot compare {q.kind} with {p.kind}")
    return q.kind


def log_power_integral(q: ExpFamDistribution, p: ExpFamDistribution, c1: float, c2: float) -> float:
    """log of int q^c1 p^c2 over the support; raises NotClosedForm if infinite."""
    kind = _check_pair(q, p)
    eta = c1 * q.natural_params + c2 * p.natural_params
    if not expfam.natural_space_member(kind, eta):
        raise NotClosedForm(f"int q^{c1:g} p^{c2:g} diverges: combined natural parameter outside the natural space")
    return (
        (c1 + c2 - 1.0) * kind.log_h
        + expfam.log_partition(kind, eta)
        - c1 * q.log_partition
        - c2 * p.log_partition
    )


def kld_value(q: ExpFamDistribution, p: ExpFamDistribution) -> float:
    _check_pair(q, p)
    diff = q.natural_params - p.natural_params
    return float(p.log_partition - q.log_partition + diff @ expfam.mean_sufficient_stats(q))


def abg_divergence(q: ExpFamDistribution, p: ExpFamDistribution, a: float, b: float, r: float) -> float:
    """Three-parameter (alpha, beta, r) family; alpha and beta kinds are special cases."""
    if a == 0 or b == 1 or a + b == 1 or r <= 0:
        raise InvalidParameters("need a != 0, b != 1, a + b != 1 and r > 0")
    s = a + b - 1.0
    core = (
        a * math.exp(log_power_integral(q, q, s, 0.0))
        + (b - 1.0) * math.exp(log_power_integral(p, p, s, 0.0))
        - s * math.exp(log_power_integral(q, p, a, b - 1.0))
    )
    return ((core + 1.0) ** r - 1.0) / (a * (b - 1.0) * s * r)


def _closed_value(q: ExpFamDistribution, p: ExpFamDistribution, spec: DivergenceSpec) -> float:
    k, c = spec.kind, spec.param
    if k == "kld":
        return kld_value(q, p)
    if k == "weighted_kld":
        return kld_value(q, p) / c
    if k in ("alpha", "renyi"):
        g = log_power_integral(q, p, c, 1.0 - c)
        if k == "alpha":
            return -math.expm1(g) / (c * (1.0 - c))
        return g / (c * (c - 1.0))
    # beta and gamma share the three power integrals
    qq = log_power_integral(q, q, c, 0.0)
    pp = log_power_integral(p, p, c, 0.0)
    qp = log_power_integral(q, p, 1.0, c - 1.0)
    if k == "beta":
        return math.exp(qq) / (c * (c - 1.0)) + math.exp(pp) / c - math.exp(qp) / (c - 1.0)
    return (qq + (c - 1.0) * pp - c * qp) / (c * (c - 1.0))


def closed_form(q: ExpFamDistribution, p: ExpFamDistribution, spec: DivergenceSpec) -> DivergenceValue:
    return DivergenceValue(float(_closed_value(q, p, spec)), "closed_form")


def renyi_from_alpha(alpha_value: float, a: float) -> float:
    """Map an alpha-divergence value to the rescaled Renyi divergence with the same a."""
    return math.log1p(-a * (1.0 - a) * alpha_value) / (a * (a - 1.0))


def closed_form_available(q: ExpFamDistribution, p: ExpFamDistribution, spec: DivergenceSpec) -> bool:
    try:
        _closed_value(q, p, spec)
    except NotClosedForm:
        return False
    return True


# ---------------------------------------------------------------------------
# expectation representation shared by Monte Carlo and gradient estimators


@dataclass(frozen=True)
class _Terms:
    coef: np.ndarray  # c_j
    a: np.ndarray  # exponent on q
    b: np.ndarray  # exponent on p
    const: float
    log: bool  # D = sum c_j log m_j  instead of  const + sum c_j m_j


def _terms(spec: DivergenceSpec) -> _Terms:
    c = spec.param
    if spec.kind == "alpha":
        k = 1.0 / (c * (1.0 - c))
        return _Terms(np.array([-k]), np.array([c - 1.0]), np.array([1.0 - c]), k, False)
    if spec.kind == "renyi":
        return _Terms(np.array([1.0 / (c * (c - 1.0))]), np.array([c - 1.0]), np.array([1.0 - c]), 0.0, True)
    a = np.array([c - 1.0, -1.0, 0.0])
    b = np.array([0.0, c, c - 1.0])
    if spec.kind == "beta":
        coef = np.array([1.0 / (c * (c - 1.0)), 1.0 / c, -1.0 / (c - 1.0)])
        return _Terms(coef, a, b, 0.0, False)
    if spec.kind == "gamma":
        coef = np.array([1.0, c - 1.0, -c]) / (c * (c - 1.0))
        return _Terms(coef, a, b, 0.0, True)
    raise InvalidParameters(f"{spec.kind} has no power-expectation form")


def _log_terms(t: _Terms, lq: np.ndarray, lp: np.ndarray) -> np.ndarray:
    """log u_{js} = a_j lq_s + b_j lp_s, shape (J, S)."""
    return t.a[:, None] * lq[None, :] + t.b[:, None] * lp[None, :]


def estimate_terms(
    spec: DivergenceSpec, lq: np.ndarray, lp: np.ndarray, lp_own: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray]:
    """Estimate from log q and log p at draws from q, plus per-draw terms.

    The spread of the per-draw terms gives the standard error: they are the
    integrand for linear kinds and the delta-method linearization for
    log-transformed kinds.

    ``lp_own`` holds log p at draws from p itself. When given, the
    q-free term int p^c is estimated as E_p[p^(c-1)] instead of by
    importance weighting E_q[p^c / q], which collapses when q and p barely
    overlap.
    """
    S = lq.size
    if spec.kind in ("kld", "weighted_kld"):
        f = lq - lp
        if spec.kind == "weighted_kld":
            f = f / spec.param
        return float(f.mean()), f
    t = _terms(spec)
    lu = _log_terms(t, lq, lp)
    if lp_own is not None:
        own = t.a == -1.0
        lu[own] = (t.b[own] - 1.0)[:, None] * lp_own[None, :]
    if not t.log:
        f = t.const + t.coef @ np.exp(lu)
        return float(f.mean()), f
    log_m = logsumexp(lu, axis=1) - math.log(S)
    f = t.coef @ np.exp(lu - log_m[:, None])
    return float(t.coef @ log_m), f


def estimate_from_logs(
    spec: DivergenceSpec, lq: np.ndarray, lp: np.ndarray, lp_own: Optional[np.ndarray] = None
) -> tuple[float, float]:
    """(estimate, standard error) from log q and log p evaluated at draws from q."""
    value, f = estimate_terms(spec, lq, lp, lp_own)
    return value, float(f.std(ddof=1) / math.sqrt(lq.size))


def mc_estimate(q: ExpFamDistribution, p: ExpFamDistribution, spec: DivergenceSpec, S: int, seed: int) -> DivergenceValue:
    if S < 100:
        raise InvalidParameters("Monte-Carlo estimate needs S >= 100")
    _check_pair(q, p)
    theta = expfam.sample(q, S, seed)
    lq = expfam.log_pdf(q, theta)
    lp = expfam.log_pdf(p, theta)
    lp_own = None
    if spec.kind in ("beta", "gamma"):
        lp_own = expfam.log_pdf(p, expfam.draw(p, S, np.random.default_rng([seed, 1])))
    value, se = estimate_from_logs(spec, lq, lp, lp_own)
    return DivergenceValue(value, "monte_carlo", S, se, spec.log_transformed)


def gradient_samples(spec: DivergenceSpec, lq: np.ndarray, lp: np.ndarray, score: np.ndarray) -> np.ndarray:
    """Per-draw score-function gradient terms of D with respect to kappa, shape (S, P).

    For linear kinds the mean of the rows is an unbiased estimate of the
    gradient.  For log-transformed kinds the weights are normalized by the
    sample means, which makes the estimate consistent but biased.
    """
    if spec.kind in ("kld", "weighted_kld"):
        f = lq - lp + 1.0
        if spec.kind == "weighted_kld":
            f = f / spec.param
        return f[:, None] * score
    t = _terms(spec)
    lu = _log_terms(t, lq, lp)
    if t.log:
        lu = lu - (logsumexp(lu, axis=1) - math.log(lq.size))[:, None]
    f = (t.coef * (1.0 + t.a)) @ np.exp(lu)
    return f[:, None] * score


# ---------------------------------------------------------------------------
# gradients of closed forms


def _kld_gradient_normal(kappa: np.ndarray, p: ExpFamDistribution, d: int) -> np.ndarray:
    mu, v = kappa[:d], np.exp(kappa[d:])
    mu0, v0 = p.params
    return np.concatenate([(mu - mu0) / v0, 0.5 * (v / v0 - 1.0)])


def divergence_gradient(
    q_family: FamilyKind, kappa, p: ExpFamDistribution, spec: DivergenceSpec
) -> np.ndarray:
    """Gradient of the closed-form divergence with respect to the unconstrained kappa."""
    kappa = np.asarray(kappa, dtype=float)
    if not q_family.same_family(p.kind):
        raise FamilyMismatch(f"cannot compare {q_family} with {p.kind}")
    if q_family.is_normal and spec.kind in ("kld", "weighted_kld"):
        g = _kld_gradient_normal(kappa, p, q_family.d)
        return g / spec.param if spec.kind == "weighted_kld" else g

    def f(k):
        return _closed_value(expfam.from_kappa(q_family, k), p, spec)

    f(kappa)  # surface NotClosedForm at the point itself
    grad = np.empty_like(kappa)
    for i in range(kappa.size):
        h = 1e-5 * max(1.0, abs(kappa[i]))
        up, dn = kappa.copy(), kappa.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2.0 * h)
    return grad
