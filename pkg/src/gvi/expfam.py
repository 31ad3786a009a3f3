"""Exponential-family distributions used as priors and variational families.

Every supported family is written as

    p(theta | eta) = h * exp(eta' T(theta) - A(eta))

with a constant base measure ``h``, so ``A`` is the log-normalizer of
``exp(eta' T(theta))`` with ``log h`` kept separate.  With this convention a
standard normal has ``A = 0`` and ``log h = -log(2 pi) / 2``.

Parameter layouts (mean space):

* ``diag_normal`` / ``normal``: ``(mu_1..mu_d, v_1..v_d)``
* ``nig``: ``(mu_1..mu_d, V_1..V_d, a, b)`` for
  ``theta | s2 ~ N(mu, s2 diag(V))``, ``s2 ~ IG(a, b)``; draws are
  ``(theta_1..theta_d, s2)``
* ``inv_gamma``: ``(a, b)``

Sufficient statistics: normal ``(theta, theta^2)`` per coordinate; NIG
``(theta/s2, theta^2/s2, 1/s2, log s2)``; inverse gamma ``(1/s2, log s2)``.

Optimizers work on an unconstrained vector ``kappa`` in which every
positive quantity is stored on the log scale (see :func:`to_kappa`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from .errors import InvalidParameters, OutOfSupport, OutsideNaturalSpace

LOG_2PI = float(np.log(2.0 * np.pi))

_NAMES = ("diag_normal", "normal", "nig", "inv_gamma")


@dataclass(frozen=True)
class FamilyKind:
    name: str
    d: int = 1

    def __post_init__(self):
        if self.name not in _NAMES:
            raise InvalidParameters(f"unknown family {self.name!r}")
        if int(self.d) != self.d or self.d < 1:
            raise InvalidParameters("dimension must be a positive integer")
        if self.name in ("normal", "inv_gamma") and self.d != 1:
            raise InvalidParameters(f"{self.name} is one-dimensional")

    @classmethod
    def diagonal_normal(cls, d: int) -> "FamilyKind":
        return cls("diag_normal", d)

    @classmethod
    def univariate_normal(cls) -> "FamilyKind":
        return cls("normal", 1)

    @classmethod
    def normal_inverse_gamma(cls, d: int) -> "FamilyKind":
        return cls("nig", d)

    @classmethod
    def inverse_gamma(cls) -> "FamilyKind":
        return cls("inv_gamma", 1)

    @property
    def is_normal(self) -> bool:
        return self.name in ("diag_normal", "normal")

    @property
    def theta_dim(self) -> int:
        """Length of one draw."""
        if self.is_normal:
            return self.d
        if self.name == "nig":
            return self.d + 1
        return 1

    @property
    def n_params(self) -> int:
        if self.is_normal:
            return 2 * self.d
        if self.name == "nig":
            return 2 * self.d + 2
        return 2

    @property
    def log_h(self) -> float:
        """Log of the constant base measure."""
        if self.name == "inv_gamma":
            return 0.0
        return -0.5 * self.d * LOG_2PI

    def same_family(self, other: "FamilyKind") -> bool:
        # a univariate normal and a 1-d diagonal normal are the same family
        if self.is_normal and other.is_normal:
            return self.d == other.d
        return self == other


def _split_mean(kind: FamilyKind, m: np.ndarray):
    d = kind.d
    if kind.is_normal:
        return m[:d], m[d:]
    if kind.name == "nig":
        return m[:d], m[d : 2 * d], m[2 * d], m[2 * d + 1]
    return m[0], m[1]


def _check_mean(kind: FamilyKind, m: np.ndarray) -> None:
    if m.shape != (kind.n_params,):
        raise InvalidParameters(f"{kind.name} needs {kind.n_params} parameters, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidParameters("parameters must be finite")
    if kind.is_normal:
        positive = m[kind.d :]
    elif kind.name == "nig":
        positive = m[kind.d :]
    else:
        positive = m
    if np.any(positive <= 0):
        raise InvalidParameters(f"{kind.name}: variances and (a, b) must be strictly positive")


def natural_from_mean(kind: FamilyKind, mean_params) -> np.ndarray:
    m = np.asarray(mean_params, dtype=float)
    if kind.is_normal:
        mu, v = _split_mean(kind, m)
        return np.concatenate([mu / v, -0.5 / v])
    if kind.name == "nig":
        mu, V, a, b = _split_mean(kind, m)
        eta3 = -b - np.sum(mu * mu / (2.0 * V))
        eta4 = -(a + 1.0 + 0.5 * kind.d)
        return np.concatenate([mu / V, -0.5 / V, [eta3, eta4]])
    a, b = _split_mean(kind, m)
    return np.array([-b, -(a + 1.0)])


def _mean_from_natural_unchecked(kind: FamilyKind, eta: np.ndarray) -> np.ndarray:
    d = kind.d
    if kind.is_normal:
        v = -0.5 / eta[d:]
        return np.concatenate([eta[:d] * v, v])
    if kind.name == "nig":
        V = -0.5 / eta[d : 2 * d]
        mu = eta[:d] * V
        b = -eta[2 * d] - np.sum(mu * mu / (2.0 * V))
        a = -eta[2 * d + 1] - 1.0 - 0.5 * d
        return np.concatenate([mu, V, [a, b]])
    return np.array([-eta[1] - 1.0, -eta[0]])


def natural_space_member(kind: FamilyKind, eta) -> bool:
    """True iff ``A(eta)`` is finite."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (kind.n_params,):
        raise InvalidParameters(f"natural parameter vector must have length {kind.n_params}")
    if not np.all(np.isfinite(eta)):
        return False
    d = kind.d
    # precisions first: the mean map divides by them
    if kind.is_normal and np.any(eta[d:] >= 0):
        return False
    if kind.name == "nig" and np.any(eta[d : 2 * d] >= 0):
        return False
    m = _mean_from_natural_unchecked(kind, eta)
    if kind.is_normal:
        return bool(np.all(m[d:] > 0))
    if kind.name == "nig":
        return bool(np.all(m[d:] > 0) and np.all(np.isfinite(m)))
    return bool(np.all(m > 0))


def mean_from_natural(kind: FamilyKind, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if not natural_space_member(kind, eta):
        raise OutsideNaturalSpace(f"{kind.name}: natural parameters {eta} are not in the natural space")
    return _mean_from_natural_unchecked(kind, eta)


def log_partition(kind: FamilyKind, eta) -> float:
    """Log-normalizer ``A(eta)`` (excluding the constant base measure)."""
    eta = np.asarray(eta, dtype=float)
    if not natural_space_member(kind, eta):
        raise OutsideNaturalSpace(f"{kind.name}: A(eta) is infinite at {eta}")
    d = kind.d
    if kind.is_normal:
        e1, e2 = eta[:d], eta[d:]
        return float(np.sum(-0.5 * np.log(-2.0 * e2) - e1 * e1 / (4.0 * e2)))
    m = _mean_from_natural_unchecked(kind, eta)
    if kind.name == "nig":
        V, a, b = m[d : 2 * d], m[2 * d], m[2 * d + 1]
        return float(0.5 * np.sum(np.log(V)) - a * np.log(b) + gammaln(a))
    a, b = m
    return float(gammaln(a) - a * np.log(b))


@dataclass(frozen=True, eq=False)
class ExpFamDistribution:
    """Immutable member of a supported family, stored in mean space."""

    kind: FamilyKind
    mean_params: np.ndarray
    natural_params: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = np.array(self.mean_params, dtype=float).reshape(-1)
        _check_mean(self.kind, m)
        eta = natural_from_mean(self.kind, m)
        m.flags.writeable = False
        eta.flags.writeable = False
        object.__setattr__(self, "mean_params", m)
        object.__setattr__(self, "natural_params", eta)

    @classmethod
    def from_natural(cls, kind: FamilyKind, eta) -> "ExpFamDistribution":
        return cls(kind, mean_from_natural(kind, eta))

    def __eq__(self, other):
        return (
            isinstance(other, ExpFamDistribution)
            and self.kind.same_family(other.kind)
            and np.array_equal(self.mean_params, other.mean_params)
        )

    def __hash__(self):
        return hash((self.kind, self.mean_params.tobytes()))

    @property
    def log_partition(self) -> float:
        return log_partition(self.kind, self.natural_params)

    @property
    def params(self):
        """Mean parameters split into named pieces."""
        return _split_mean(self.kind, self.mean_params)


def normal(mu: float, var: float) -> ExpFamDistribution:
    return ExpFamDistribution(FamilyKind.univariate_normal(), [mu, var])


def diag_normal(mu, var) -> ExpFamDistribution:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    var = np.broadcast_to(np.asarray(var, dtype=float), mu.shape)
    return ExpFamDistribution(FamilyKind.diagonal_normal(mu.size), np.concatenate([mu, var]))


def nig(mu, V, a: float, b: float) -> ExpFamDistribution:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    V = np.broadcast_to(np.asarray(V, dtype=float), mu.shape)
    return ExpFamDistribution(FamilyKind.normal_inverse_gamma(mu.size), np.concatenate([mu, V, [a, b]]))


def inverse_gamma(a: float, b: float) -> ExpFamDistribution:
    return ExpFamDistribution(FamilyKind.inverse_gamma(), [a, b])


def _as_draws(kind: FamilyKind, theta) -> tuple[np.ndarray, bool]:
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim <= 1
    theta = np.atleast_2d(theta.reshape(1, -1) if single else theta)
    if theta.shape[1] != kind.theta_dim:
        raise OutOfSupport(f"{kind.name} draws have length {kind.theta_dim}, got {theta.shape[1]}")
    return theta, single


def _check_support(kind: FamilyKind, theta: np.ndarray) -> None:
    if not np.all(np.isfinite(theta)):
        raise OutOfSupport("non-finite point")
    if kind.name == "nig" and np.any(theta[:, -1] <= 0):
        raise OutOfSupport("NIG variance component must be positive")
    if kind.name == "inv_gamma" and np.any(theta <= 0):
        raise OutOfSupport("inverse-gamma support is (0, inf)")


def sufficient_stats(kind: FamilyKind, theta) -> np.ndarray:
    """T(theta) row-wise; ``theta`` is a single draw or an (S, p) array."""
    th, single = _as_draws(kind, theta)
    d = kind.d
    if kind.is_normal:
        T = np.concatenate([th, th * th], axis=1)
    elif kind.name == "nig":
        x, s2 = th[:, :d], th[:, d : d + 1]
        T = np.concatenate([x / s2, x * x / s2, 1.0 / s2, np.log(s2)], axis=1)
    else:
        T = np.concatenate([1.0 / th, np.log(th)], axis=1)
    return T[0] if single else T


def log_pdf(dist: ExpFamDistribution, theta):
    """Log density; scalar for a single draw, array for an (S, p) batch."""
    kind = dist.kind
    th, single = _as_draws(kind, theta)
    _check_support(kind, th)
    T = sufficient_stats(kind, th)
    out = kind.log_h + T @ dist.natural_params - dist.log_partition
    return float(out[0]) if single else out


def mean_sufficient_stats(dist: ExpFamDistribution) -> np.ndarray:
    """E_q[T(theta)], equal to the gradient of A at the natural parameters."""
    kind = dist.kind
    if kind.is_normal:
        mu, v = dist.params
        return np.concatenate([mu, mu * mu + v])
    if kind.name == "nig":
        mu, V, a, b = dist.params
        e_prec = a / b
        return np.concatenate([mu * e_prec, mu * mu * e_prec + V, [e_prec, np.log(b) - digamma(a)]])
    a, b = dist.params
    return np.array([a / b, np.log(b) - digamma(a)])


def theta_mean(dist: ExpFamDistribution) -> np.ndarray:
    """E[theta] of a draw (for NIG the last entry is E[s2], needs a > 1)."""
    kind = dist.kind
    if kind.is_normal:
        return np.array(dist.params[0])
    if kind.name == "nig":
        mu, V, a, b = dist.params
        return np.concatenate([mu, [b / (a - 1.0) if a > 1 else np.inf]])
    a, b = dist.params
    return np.array([b / (a - 1.0) if a > 1 else np.inf])


def marginal_variance(dist: ExpFamDistribution) -> np.ndarray:
    """Marginal variances of the location coordinates (NIG: Student-t marginals)."""
    kind = dist.kind
    if kind.is_normal:
        return np.array(dist.params[1])
    if kind.name == "nig":
        _, V, a, b = dist.params
        if a <= 1:
            return np.full(kind.d, np.inf)
        return V * b / (a - 1.0)
    a, b = dist.params
    return np.array([b * b / ((a - 1.0) ** 2 * (a - 2.0)) if a > 2 else np.inf])


def draw(dist: ExpFamDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` samples using an existing generator; returns (n, p)."""
    kind = dist.kind
    if kind.is_normal:
        mu, v = dist.params
        return mu + np.sqrt(v) * rng.standard_normal((n, kind.d))
    if kind.name == "nig":
        mu, V, a, b = dist.params
        s2 = b / rng.standard_gamma(a, size=n)
        x = mu + np.sqrt(s2[:, None] * V) * rng.standard_normal((n, kind.d))
        return np.concatenate([x, s2[:, None]], axis=1)
    a, b = dist.params
    return (b / rng.standard_gamma(a, size=n))[:, None]


def sample(dist: ExpFamDistribution, n: int, seed: int) -> np.ndarray:
    """Deterministic i.i.d. draws for a given seed; returns an (n, p) matrix."""
    if n < 1:
        raise InvalidParameters("n must be at least 1")
    return draw(dist, n, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# unconstrained parameterization used by optimizers


def to_kappa(dist: ExpFamDistribution) -> np.ndarray:
    kind = dist.kind
    m = dist.mean_params
    d = kind.d
    if kind.is_normal:
        return np.concatenate([m[:d], np.log(m[d:])])
    if kind.name == "nig":
        return np.concatenate([m[:d], np.log(m[d:])])
    return np.log(m)


def from_kappa(kind: FamilyKind, kappa) -> ExpFamDistribution:
    k = np.asarray(kappa, dtype=float)
    d = kind.d
    if k.shape != (kind.n_params,):
        raise InvalidParameters(f"kappa for {kind.name} must have length {kind.n_params}")
    if kind.name == "inv_gamma":
        m = np.exp(k)
    else:
        m = np.concatenate([k[:d], np.exp(k[d:])])
    return ExpFamDistribution(kind, m)


def score(kind: FamilyKind, kappa, theta) -> np.ndarray:
    """Gradient of ``log q(theta | kappa)`` with respect to kappa, row-wise."""
    th, _ = _as_draws(kind, theta)
    k = np.asarray(kappa, dtype=float)
    d = kind.d
    if kind.is_normal:
        mu, v = k[:d], np.exp(k[d:])
        r = th - mu
        return np.concatenate([r / v, -0.5 + r * r / (2.0 * v)], axis=1)
    if kind.name == "nig":
        mu, V = k[:d], np.exp(k[d : 2 * d])
        a, b = np.exp(k[2 * d]), np.exp(k[2 * d + 1])
        x, s2 = th[:, :d], th[:, d : d + 1]
        r = x - mu
        g_mu = r / (s2 * V)
        g_V = -0.5 + r * r / (2.0 * s2 * V)
        g_a = a * (np.log(b) - digamma(a) - np.log(s2))
        g_b = a - b / s2
        return np.concatenate([g_mu, g_V, g_a, g_b], axis=1)
    a, b = np.exp(k)
    return np.concatenate([a * (np.log(b) - digamma(a) - np.log(th)), a - b / th], axis=1)
