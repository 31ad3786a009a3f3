"""Reference computations for checking the main implementation.

Nothing here imports the rest of the package: quadrature, finite differences,
grid search, plain Monte Carlo and textbook Gaussian formulas are written
directly against numpy/scipy so agreement is evidence, not tautology.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.stats import invgamma, norm

from .errors import InvalidParameters, NoConvergence


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-11
    rel_tol: float = 1e-10
    max_subdivisions: int = 500
    truncate_sds: float = 12.0  # integrate over mean +- truncate_sds * sd

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.max_subdivisions > 0 and self.truncate_sds > 0):
            raise InvalidParameters("quadrature tolerances and limits must be positive")

    def bounds(self, mean: float, sd: float) -> tuple[float, float]:
        return mean - self.truncate_sds * sd, mean + self.truncate_sds * sd


def quadrature_integral(
    f: Callable, bounds: Sequence, config: QuadratureConfig = QuadratureConfig()
) -> tuple[float, float]:
    """Adaptive Gauss-Kronrod integral of f over a 1-d interval or a 2-d box.

    ``bounds`` is ``(lo, hi)`` or ``((lo_x, hi_x), (lo_y, hi_y))``; in 2-d
    ``f(x, y)`` is called with x the outer variable.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if np.ndim(bounds[0]) == 0:
                lo, hi = bounds
                val, err = integrate.quad(
                    f, lo, hi, epsabs=config.abs_tol, epsrel=config.rel_tol, limit=config.max_subdivisions
                )
            else:
                (xl, xh), (yl, yh) = bounds
                val, err = integrate.dblquad(
                    lambda y, x: f(x, y), xl, xh, yl, yh, epsabs=config.abs_tol, epsrel=config.rel_tol
                )
        except integrate.IntegrationWarning as exc:
            raise NoConvergence(str(exc)) from exc
    if not math.isfinite(val):
        raise NoConvergence("integral is not finite")
    return float(val), float(err)


def finite_difference_gradient(f: Callable, kappa, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences with step rel_step * max(1, |kappa_i|)."""
    k = np.asarray(kappa, dtype=float)
    g = np.zeros_like(k)
    for i in range(k.size):
        h = rel_step * max(1.0, abs(k[i]))
        e = np.zeros_like(k)
        e[i] = h
        g[i] = (f(k + e) - f(k - e)) / (2.0 * h)
    return g


def _grid(f, box, resolution):
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    best, best_pt = math.inf, None
    for pt in itertools.product(*axes):
        v = f(np.array(pt))
        if v < best:
            best, best_pt = v, np.array(pt)
    steps = np.array([(hi - lo) / (resolution - 1) for lo, hi in box])
    return best_pt, steps


def grid_argmin(f: Callable, box: Sequence, resolution: int = 51) -> np.ndarray:
    """Exhaustive grid search plus one refinement pass around the coarse optimum.

    The refined grid spans one coarse cell either side of the coarse optimum,
    so the answer is accurate to 2 * coarse_step / (resolution - 1) per axis.
    """
    box = [tuple(map(float, b)) for b in box]
    if not 1 <= len(box) <= 3:
        raise InvalidParameters("grid search supports 1 to 3 dimensions")
    if resolution < 50:
        raise InvalidParameters("use at least 50 points per axis")
    coarse, steps = _grid(f, box, resolution)
    fine_box = [(c - s, c + s) for c, s in zip(coarse, steps)]
    fine, _ = _grid(f, fine_box, resolution)
    return fine


def grid_cell(box: Sequence, resolution: int = 51) -> np.ndarray:
    """Per-axis spacing of the refined grid used by :func:`grid_argmin`."""
    return np.array([2.0 * (hi - lo) / (resolution - 1) / (resolution - 1) for lo, hi in box])


def mc_mean(f: Callable, sampler: Callable, S: int, seed: int) -> tuple[float, float]:
    """Plain Monte-Carlo mean and standard error of f over S draws."""
    rng = np.random.default_rng(seed)
    vals = np.asarray(f(sampler(rng, S)), dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(S))


# ---------------------------------------------------------------------------
# textbook Gaussian facts


def gaussian_kld(mu_q, v_q, mu_p, v_p) -> float:
    """KL(N(mu_q, diag v_q) || N(mu_p, diag v_p))."""
    mu_q, v_q, mu_p, v_p = map(np.asarray, (mu_q, v_q, mu_p, v_p))
    return float(0.5 * np.sum(v_q / v_p + (mu_q - mu_p) ** 2 / v_p - 1.0 + np.log(v_p / v_q)))


def gaussian_power_integral(mu_q, v_q, mu_p, v_p, c1: float, c2: float) -> float:
    """int N(x; mu_q, v_q)^c1 N(x; mu_p, v_p)^c2 dx for scalars, by quadrature."""
    sd = math.sqrt(max(v_q, v_p))
    lo, hi = min(mu_q, mu_p) - 14 * sd, max(mu_q, mu_p) + 14 * sd
    f = lambda x: norm.pdf(x, mu_q, math.sqrt(v_q)) ** c1 * norm.pdf(x, mu_p, math.sqrt(v_p)) ** c2
    return quadrature_integral(f, (lo, hi))[0]


def normal_normal_posterior(x, sigma2: float, mu0: float, v0: float) -> tuple[float, float]:
    """Posterior (mean, variance) of a scalar mean with a normal prior."""
    x = np.asarray(x, dtype=float).ravel()
    prec = 1.0 / v0 + x.size / sigma2
    return float((mu0 / v0 + x.sum() / sigma2) / prec), float(1.0 / prec)


def nig_log_density(theta, s2, mu, V, a, b) -> float:
    """log N(theta; mu, s2 diag V) + log IG(s2; a, b) from scipy's densities."""
    theta, mu, V = map(lambda z: np.atleast_1d(np.asarray(z, dtype=float)), (theta, mu, V))
    return float(np.sum(norm.logpdf(theta, mu, np.sqrt(s2 * V))) + invgamma.logpdf(s2, a, scale=b))


def nig_density(theta, s2, mu, V, a, b) -> float:
    return math.exp(nig_log_density(theta, s2, mu, V, a, b))


__all__ = [
    "QuadratureConfig",
    "quadrature_integral",
    "finite_difference_gradient",
    "grid_argmin",
    "grid_cell",
    "mc_mean",
    "gaussian_kld",
    "gaussian_power_integral",
    "normal_normal_posterior",
    "nig_log_density",
    "nig_density",
]
