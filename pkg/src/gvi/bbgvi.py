"""Black-box GVI: score-function gradients with ADAM on the unconstrained kappa.

Per step, draws theta_1..theta_S from q(. | kappa) and a minibatch of K
observations, and forms per-draw gradient terms

    G_s = (n/K) sum_{i in batch} l(theta_s, x_i) * score_s + divergence term_s

where score_s = d log q(theta_s | kappa) / d kappa.  The divergence term is one of

* ``closed``: the exact gradient of the closed-form divergence (same for every draw)
* ``expectation``: the score-function gradient of E_q[l^D] for divergences linear in
  expectations (unbiased)
* ``biased_tau``: self-normalized weights for divergences that take logs of
  expectations (consistent, biased for finite S)

An optional control variate subtracts a_d * score_sd per coordinate, with
a_d = Cov(G_d, score_d) / Var(score_d).  The recorded a_d uses all draws;
each draw is corrected with the ratio computed from the other draws so the
estimate stays unbiased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from . import divergence as dv
from . import expfam, scoring
from .errors import EstimatorMismatch, InvalidParameters, NonFinite
from .problem import GviProblem
from .scoring import GaussianMean

ESTIMATORS = ("closed", "expectation", "biased_tau", "auto")


@dataclass(frozen=True)
class OptimizerConfig:
    estimator: str = "auto"
    S: int = 16
    K: Optional[int] = None  # minibatch size, None for the full data
    max_iters: int = 5000
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tol: float = 1e-6  # relative kappa change counted as "no progress"
    patience: int = 50
    control_variate: bool = True
    rao_blackwell: bool = False
    decay: float = 0.0  # step size at iteration t is step_size / (1 + decay * t)
    average_tail: float = 0.0  # fraction of final iterates averaged into the answer
    seed: int = 0

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise InvalidParameters(f"unknown estimator {self.estimator!r}")
        if self.S < 1 or (self.K is not None and self.K < 1) or self.max_iters < 1:
            raise InvalidParameters("S, K and max_iters must be at least 1")
        if not self.step_size > 0:
            raise InvalidParameters("step size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidParameters("ADAM betas must lie in [0, 1)")
        if not 0 <= self.average_tail < 1 or self.decay < 0 or self.patience < 1:
            raise InvalidParameters("invalid averaging, decay or patience setting")


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    gradient: np.ndarray
    estimator: str  # resolved estimator kind
    per_draw: np.ndarray  # (S, P) terms after the control variate
    variance: np.ndarray  # per-coordinate sample variance of per_draw
    cv_scale: np.ndarray  # a_d, zeros when the control variate is off
    objective: float  # Monte-Carlo estimate of the objective at kappa


@dataclass(frozen=True, eq=False)
class IterationRecord:
    iteration: int
    kappa: np.ndarray
    objective: float
    grad_norm: float
    grad_variance: np.ndarray
    cv_scale: np.ndarray


@dataclass(frozen=True, eq=False)
class OptimizationTrace:
    records: list
    kappa: np.ndarray  # final answer (tail average when enabled)
    last_kappa: np.ndarray
    reason: str  # "converged" or "max_iters"


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def resolve_estimator(problem: GviProblem, kappa, requested: str) -> str:
    spec = problem.divergence
    q = problem.q(kappa)
    if requested == "closed":
        if not dv.closed_form_available(q, problem.prior, spec):
            raise EstimatorMismatch(f"{spec.label()} has no closed form at this kappa")
        return "closed"
    if requested == "expectation":
        if spec.log_transformed:
            raise EstimatorMismatch(f"{spec.label()} is not an expectation; use biased_tau")
        return "expectation"
    if requested == "biased_tau":
        return "biased_tau"
    if dv.closed_form_available(q, problem.prior, spec):
        return "closed"
    return "biased_tau" if spec.log_transformed else "expectation"


def _minibatch(problem: GviProblem, K: Optional[int], rng: np.random.Generator):
    n = problem.n
    if K is None or K >= n:
        return problem.data, problem.design, 1.0
    idx = np.sort(rng.choice(n, size=K, replace=False))
    design = None if problem.design is None else problem.design[idx]
    return problem.data[idx], design, n / K


def _rao_blackwell_loss(problem: GviProblem, theta: np.ndarray, x: np.ndarray, scale: float, score: np.ndarray):
    """Per-draw loss gradient using only each coordinate's own loss terms."""
    spec = problem.loss
    d = problem.family.d
    if spec.score.kind == "neglog":
        per = ((x[None, :, :] - theta[:, None, :]) ** 2).sum(axis=1) / (2.0 * spec.model.sigma2)
    else:
        per = np.abs(x[None, :, :] - theta[:, None, :]).sum(axis=1)
    per = spec.weight * scale * per  # (S, d)
    return np.concatenate([per * score[:, :d], per * score[:, d:]], axis=1)


def _can_rao_blackwell(problem: GviProblem) -> bool:
    return (
        isinstance(problem.loss.model, GaussianMean)
        and problem.family.is_normal
        and problem.loss.score.kind in ("neglog", "absolute")
    )


def gradient_samples(
    problem: GviProblem, kappa, config: OptimizerConfig, rng: np.random.Generator
) -> GradientEstimate:
    kappa = np.asarray(kappa, dtype=float)
    kind = resolve_estimator(problem, kappa, config.estimator)
    q = problem.q(kappa)
    theta = expfam.draw(q, config.S, rng)
    score = expfam.score(problem.family, kappa, theta)
    x, design, scale = _minibatch(problem, config.K, rng)
    loss_s = scale * scoring.loss_matrix(problem.loss, theta, x, design).sum(axis=1)
    if config.rao_blackwell:
        if not _can_rao_blackwell(problem):
            raise InvalidParameters("Rao-Blackwellization needs a factorized location loss and normal family")
        G = _rao_blackwell_loss(problem, theta, x, scale, score)
    else:
        G = loss_s[:, None] * score
    spec = problem.divergence
    if kind == "closed":
        G = G + dv.divergence_gradient(problem.family, kappa, problem.prior, spec)[None, :]
        d_value = dv.closed_form(q, problem.prior, spec).value
    else:
        lq = expfam.log_pdf(q, theta)
        lp = expfam.log_pdf(problem.prior, theta)
        G = G + dv.gradient_samples(spec, lq, lp, score)
        d_value = dv.estimate_terms(spec, lq, lp)[0]
    a = np.zeros(kappa.size)
    if config.control_variate and config.S > 2:
        a = _cv_ratio(G, score)
        G = G - _loo_cv_ratio(G, score) * score
    variance = G.var(axis=0, ddof=1) if config.S > 1 else np.zeros(kappa.size)
    return GradientEstimate(G.mean(axis=0), kind, G, variance, a, float(loss_s.mean() + d_value))


def _cv_ratio(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per-coordinate Cov(G_d, h_d) / Var(h_d)."""
    hc = h - h.mean(axis=0)
    var_h = (hc * hc).sum(axis=0)
    cov = ((G - G.mean(axis=0)) * hc).sum(axis=0)
    return np.divide(cov, var_h, out=np.zeros_like(cov), where=var_h > 0)


def _loo_cv_ratio(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    """The same ratio for each draw, estimated without that draw.

    Using the full-sample ratio on the draws that produced it biases the
    gradient by O(1/S); dropping the draw's own contribution removes that.
    """
    m = G.shape[0] - 1
    sg, sh = G.sum(axis=0) - G, h.sum(axis=0) - h
    sgh = (G * h).sum(axis=0) - G * h
    shh = (h * h).sum(axis=0) - h * h
    cov = sgh - sg * sh / m
    var = shh - sh * sh / m
    return np.divide(cov, var, out=np.zeros_like(cov), where=var > 0)


def _step_rng(config: OptimizerConfig, step_index: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, step_index])


def gradient_step(
    problem: GviProblem,
    kappa,
    config: OptimizerConfig,
    step_index: int,
    state: Optional[AdamState] = None,
):
    """One ADAM descent step; returns (estimate, new kappa, new ADAM state)."""
    kappa = np.asarray(kappa, dtype=float)
    est = gradient_samples(problem, kappa, config, _step_rng(config, step_index))
    g = est.gradient
    if not np.all(np.isfinite(g)) or not math.isfinite(est.objective):
        raise NonFinite(step_index, "gradient" if not np.all(np.isfinite(g)) else "objective")
    if state is None:
        state = AdamState(np.zeros_like(kappa), np.zeros_like(kappa), 0)
    t = state.t + 1
    m = config.beta1 * state.m + (1 - config.beta1) * g
    v = config.beta2 * state.v + (1 - config.beta2) * g * g
    m_hat = m / (1 - config.beta1**t)
    v_hat = v / (1 - config.beta2**t)
    lr = config.step_size / (1.0 + config.decay * step_index)
    new_kappa = kappa - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return est, new_kappa, AdamState(m, v, t)


def optimize(problem: GviProblem, kappa0, config: OptimizerConfig) -> OptimizationTrace:
    kappa = np.asarray(kappa0, dtype=float).copy()
    problem.q(kappa)  # validates kappa0
    state = None
    records = []
    quiet = 0
    reason = "max_iters"
    for it in range(config.max_iters):
        est, new_kappa, state = gradient_step(problem, kappa, config, it, state)
        if not np.all(np.isfinite(new_kappa)):
            raise NonFinite(it, "kappa")
        records.append(
            IterationRecord(it, kappa, est.objective, float(np.linalg.norm(est.gradient)), est.variance, est.cv_scale)
        )
        change = np.linalg.norm(new_kappa - kappa) / max(1.0, np.linalg.norm(kappa))
        kappa = new_kappa
        quiet = quiet + 1 if change < config.tol else 0
        if quiet >= config.patience:
            reason = "converged"
            break
    final = kappa
    if config.average_tail > 0:
        tail = max(1, int(len(records) * config.average_tail))
        final = np.mean([r.kappa for r in records[-tail:]] + [kappa], axis=0)
    return OptimizationTrace(records, final, kappa, reason)


# ---------------------------------------------------------------------------
# noise variance as a hyperparameter


@dataclass(frozen=True, eq=False)
class NoiseVarianceResult:
    sigma2: float
    kappa: np.ndarray
    objective: float


def optimize_noise_variance(
    make_problem: Callable[[float], GviProblem],
    inner: Callable[[GviProblem], tuple],
    bounds: tuple[float, float],
    tol: float = 1e-4,
) -> NoiseVarianceResult:
    """Minimize over sigma2 the objective minimized over kappa.

    ``inner(problem)`` returns (kappa, objective value) at fixed sigma2; the
    outer search is a bounded scalar minimization over log sigma2.
    """
    lo, hi = bounds
    if not 0 < lo < hi:
        raise InvalidParameters("need 0 < lower < upper for the noise variance")
    cache = {}

    def profile(log_s2):
        s2 = math.exp(log_s2)
        k, val = inner(make_problem(s2))
        cache[log_s2] = (k, val)
        return val

    res = minimize_scalar(profile, bounds=(math.log(lo), math.log(hi)), method="bounded", options={"xatol": tol})
    k, val = cache.get(res.x) or inner(make_problem(math.exp(res.x)))
    return NoiseVarianceResult(math.exp(res.x), np.asarray(k), float(val))


def with_config(config: OptimizerConfig, **changes) -> OptimizerConfig:
    return replace(config, **changes)


__all__ = [
    "OptimizerConfig",
    "GradientEstimate",
    "IterationRecord",
    "OptimizationTrace",
    "AdamState",
    "resolve_estimator",
    "gradient_samples",
    "gradient_step",
    "optimize",
    "optimize_noise_variance",
    "NoiseVarianceResult",
    "with_config",
]
