"""Generalized variational inference: expected loss plus divergence to the prior."""

from . import bbgvi, divergence, errors, expfam, oracle, problem, scoring
from .divergence import DivergenceSpec, DivergenceValue, closed_form, mc_estimate
from .expfam import ExpFamDistribution, FamilyKind
from .problem import ClosedForm, GviProblem, MonteCarlo, objective
from .scoring import GaussianLinear, GaussianMean, GaussianMixture2, LossSpec, Score

__version__ = "0.1.0"

__all__ = [
    "bbgvi",
    "divergence",
    "errors",
    "expfam",
    "oracle",
    "problem",
    "scoring",
    "DivergenceSpec",
    "DivergenceValue",
    "closed_form",
    "mc_estimate",
    "ExpFamDistribution",
    "FamilyKind",
    "ClosedForm",
    "GviProblem",
    "MonteCarlo",
    "objective",
    "GaussianLinear",
    "GaussianMean",
    "GaussianMixture2",
    "LossSpec",
    "Score",
]
