"""Experiment configuration: TOML (or JSON) files with a versioned schema.

A config looks like::

    schema_version = 1
    experiment = "blr-marginals"
    seed = 0
    output = "results"

    [parameters]
    alpha_grid = [0.5, 2.0]

Unset parameters take the defaults below.  :func:`validate` reports every
problem with a dotted field path instead of stopping at the first one.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError, ParseError

SCHEMA_VERSION = 1

_DIV_RE = re.compile(r"^\s*(kld|weighted_kld|alpha|renyi|beta|gamma)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*$")
_SCORE_RE = re.compile(r"^\s*(neglog|beta|gamma|absolute)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*$")


def parse_divergence(text: str):
    """'kld', 'renyi(0.5)', ... -> (kind, hyperparameter or None)."""
    m = _DIV_RE.match(text) if isinstance(text, str) else None
    if not m:
        raise ValueError(f"not a divergence: {text!r}")
    kind, arg = m.group(1), m.group(2)
    if (kind == "kld") != (arg is None):
        raise ValueError(f"{kind} {'takes no' if kind == 'kld' else 'needs a'} hyperparameter")
    value = None if arg is None else float(arg)
    if value is not None and (value == 1.0 or value == 0.0 or (kind == "weighted_kld" and value <= 0)):
        raise ValueError(f"invalid hyperparameter in {text!r}")
    return kind, value


def parse_score(text: str):
    m = _SCORE_RE.match(text) if isinstance(text, str) else None
    if not m:
        raise ValueError(f"not a score: {text!r}")
    kind, arg = m.group(1), m.group(2)
    if (kind in ("beta", "gamma")) != (arg is not None):
        raise ValueError(f"bad hyperparameter in {text!r}")
    value = None if arg is None else float(arg)
    if value is not None and (value <= 0 or value == 1.0):
        raise ValueError(f"invalid hyperparameter in {text!r}")
    return kind, value


# ---------------------------------------------------------------------------
# field checkers: each returns an error message or None


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def positive_int(x):
    return None if isinstance(x, int) and not isinstance(x, bool) and x > 0 else "must be a positive integer"


def number(x):
    return None if _num(x) else "must be a finite number"


def positive(x):
    return None if _num(x) and x > 0 else "must be a positive number"


def unit_open(x):
    return None if _num(x) and 0 < x < 1 else "must lie strictly between 0 and 1"


def correlation(x):
    return None if _num(x) and -1 < x < 1 else "must lie strictly between -1 and 1"


def number_list(length=None, pred=_num, what="finite numbers"):
    def check(x):
        if not isinstance(x, list) or not x:
            return "must be a nonempty list"
        if length is not None and len(x) != length:
            return f"must have exactly {length} entries"
        if not all(_num(v) and pred(v) for v in x):
            return f"entries must be {what}"
        return None

    return check


def hyper_list(x):
    err = number_list()(x)
    if err:
        return err
    if any(v in (0, 1) for v in x):
        return "hyperparameters must not be 0 or 1"
    return None


def int_list_positive(x):
    if not isinstance(x, list) or not x:
        return "must be a nonempty list"
    if not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in x):
        return "entries must be positive integers"
    return None


def one_of(*options):
    def check(x):
        return None if x in options else f"must be one of {', '.join(options)}"

    return check


def string_list(parser):
    def check(x):
        if not isinstance(x, list) or not x:
            return "must be a nonempty list"
        for v in x:
            try:
                parser(v)
            except ValueError as exc:
                return str(exc)
        return None

    return check


def pair_list(x):
    if not isinstance(x, list) or not x:
        return "must be a nonempty list"
    if not all(isinstance(p, list) and len(p) == 2 and all(_num(v) for v in p) for p in x):
        return "entries must be pairs of numbers"
    return None


def seed_list(x):
    if not isinstance(x, list) or not x:
        return "must be a nonempty list"
    if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in x):
        return "entries must be nonnegative integers"
    if len(set(x)) != len(x):
        return "replicate seeds must be distinct"
    return None


@dataclass(frozen=True)
class Field:
    default: Any
    check: Callable[[Any], Any]


_BLR = {
    "n": Field(25, positive_int),
    "theta": Field([2.0, 3.0], number_list(2)),
    "noise_var": Field(4.0, positive),
    "rho": Field(0.9, correlation),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "blr-marginals": {
        **_BLR,
        "prior_mu": Field([0.0, 0.0], number_list(2)),
        "prior_V": Field([25.0, 25.0], number_list(2, lambda v: v > 0, "positive numbers")),
        "prior_a": Field(20.0, positive),
        "prior_b": Field(50.0, positive),
        "divergence": Field("renyi", one_of("renyi", "alpha", "beta", "gamma", "weighted_kld")),
        "alpha_grid": Field([0.5, 2.0], hyper_list),
        "replicates": Field(1, positive_int),
    },
    "prior-sweep": {
        **_BLR,
        "prior_V": Field(1.0, positive),
        "prior_a": Field(3.0, positive),
        "prior_b": Field(5.0, positive),
        "mu_grid": Field([0.0, 4.0, 8.0, 12.0], number_list()),
        "shift": Field("first", one_of("first", "all")),
        "divergence": Field("renyi", one_of("renyi", "alpha", "beta", "gamma", "weighted_kld")),
        "alpha_grid": Field([0.5], hyper_list),
        "replicates": Field(10, positive_int),
    },
    "consistency": {
        "theta_star": Field(1.0, number),
        "noise_var": Field(1.0, positive),
        "prior_mean": Field(0.0, number),
        "prior_var": Field(25.0, positive),
        "n_grid": Field([50, 500, 5000], int_list_positive),
        "divergences": Field(["kld", "renyi(0.5)", "renyi(2)"], string_list(parse_divergence)),
        "replicates": Field(10, positive_int),
    },
    "mixture": {
        "settings": Field([[0.0, 0.75], [0.0, 2.0]], pair_list),
        "n": Field(100, positive_int),
        "sigma": Field(0.65, positive),
        "prior_var": Field(4.0, positive),
        "divergences": Field(["kld", "renyi(0.5)"], string_list(parse_divergence)),
        "iterations": Field(3000, positive_int),
        "samples": Field(16, positive_int),
        "step_size": Field(0.05, positive),
        "decay": Field(0.005, positive),
        "grid_resolution": Field(51, positive_int),
        "replicates": Field(1, positive_int),
    },
    "influence": {
        "noise_var": Field(1.0, positive),
        "prior_mean": Field(0.0, number),
        "prior_var": Field(25.0, positive),
        "n": Field(20, positive_int),
        "x_grid": Field([float(k) for k in range(20)], number_list()),
        "scores": Field(["neglog", "gamma(1.05)"], string_list(parse_score)),
        "replicates": Field(1, positive_int),
    },
    "contamination": {
        "theta_star": Field(0.0, number),
        "noise_var": Field(1.0, positive),
        "eps": Field(0.1, unit_open),
        "outlier_shift": Field(10.0, number),
        "n": Field(100, positive_int),
        "prior_mean": Field(0.0, number),
        "prior_var": Field(25.0, positive),
        "gamma_grid": Field([1.01, 1.05], number_list(pred=lambda v: v > 0 and v != 1, what="positive and not 1")),
        "replicates": Field(20, positive_int),
    },
    "bounds-check": {
        "divergences": Field(["renyi", "beta", "gamma"], string_list(one_of("renyi", "beta", "gamma"))),
        "hyper_grid": Field([0.5, 2.0], number_list(pred=lambda v: v > 0 and v != 1, what="positive and not 1")),
        "configs": Field(100, positive_int),
        "n": Field(10, positive_int),
        "replicates": Field(1, positive_int),
    },
    "divergence-magnitude": {
        "q_mu": Field([2.5, 2.5], number_list(2)),
        "q_V": Field([0.3, 0.3], number_list(2, lambda v: v > 0, "positive numbers")),
        "q_a": Field(512.0, positive),
        "q_b": Field(543.0, positive),
        "prior_mu": Field([0.0, 0.0], number_list(2)),
        "prior_V": Field([25.0, 25.0], number_list(2, lambda v: v > 0, "positive numbers")),
        "prior_a": Field(500.0, positive),
        "prior_b": Field(500.0, positive),
        "divergences": Field(["renyi", "alpha", "beta", "gamma"], string_list(one_of("renyi", "alpha", "beta", "gamma"))),
        "hyper_grid": Field([0.25, 0.5, 0.75, 1.25, 1.5, 2.0], hyper_list),
        "mc_samples": Field(100000, positive_int),
        "replicates": Field(1, positive_int),
    },
}

EXPERIMENTS = tuple(SCHEMAS)

# string-valued checkers used for divergence-name lists need a parser signature
for _schema in SCHEMAS.values():
    for _name, _field in list(_schema.items()):
        pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    output: str
    parameters: dict

    def seeds(self) -> list[int]:
        """Replicate seeds: explicit ``parameters.seeds`` or seed, seed + 1, ..."""
        if "seeds" in self.parameters:
            return list(self.parameters["seeds"])
        return [self.seed + i for i in range(self.parameters["replicates"])]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(self.experiment, seed, self.output, self.parameters)

    def canonical(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "seed": self.seed,
            "parameters": self.parameters,
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# reading


def read_raw(path) -> dict:
    """Parse a TOML or JSON file; syntax errors become ParseError with a position."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}", 0, 0) from exc
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            line = getattr(exc, "lineno", None)
            col = getattr(exc, "colno", None)
            if line is None:
                m = re.search(r"line (\d+), column (\d+)", str(exc))
                line, col = (int(m.group(1)), int(m.group(2))) if m else (0, 0)
            message = re.sub(r"\s*\(at line \d+, column \d+\)", "", getattr(exc, "msg", str(exc)))
            raise ParseError(message, line, col) from exc
    if not isinstance(data, dict):
        raise ParseError("top level must be a table", 1, 1)
    return data


def check_raw(data: dict) -> tuple[list[ConfigError], ExperimentConfig | None]:
    errors: list[ConfigError] = []
    known_top = {"schema_version", "experiment", "seed", "output", "parameters"}
    for key in data:
        if key not in known_top:
            errors.append(ConfigError(key, "unknown field"))
    version = data.get("schema_version")
    if version is None:
        errors.append(ConfigError("schema_version", "missing"))
    elif version != SCHEMA_VERSION:
        errors.append(ConfigError("schema_version", f"unsupported version {version!r}, expected {SCHEMA_VERSION}"))
    exp = data.get("experiment")
    if exp not in SCHEMAS:
        errors.append(ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}"))
    seed = data.get("seed", 0)
    if not (isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0):
        errors.append(ConfigError("seed", "must be a nonnegative integer"))
    output = data.get("output", "results")
    if not isinstance(output, str) or not output:
        errors.append(ConfigError("output", "must be a nonempty path string"))
    params = data.get("parameters", {})
    if not isinstance(params, dict):
        errors.append(ConfigError("parameters", "must be a table"))
        params = {}
    resolved = {}
    if exp in SCHEMAS:
        schema = SCHEMAS[exp]
        for key, value in params.items():
            if key == "seeds":
                err = seed_list(value)
                if err:
                    errors.append(ConfigError("parameters.seeds", err))
                resolved["seeds"] = value
            elif key not in schema:
                errors.append(ConfigError(f"parameters.{key}", f"unknown parameter for {exp}"))
        for key, fld in schema.items():
            value = params.get(key, copy.deepcopy(fld.default))
            err = fld.check(value)
            if err:
                errors.append(ConfigError(f"parameters.{key}", err))
            resolved[key] = value
    if errors:
        return errors, None
    return [], ExperimentConfig(exp, seed, output, resolved)


def load(path) -> ExperimentConfig:
    """Read and validate; raises the first ConfigError (or ParseError)."""
    errors, cfg = check_raw(read_raw(path))
    if errors:
        raise errors[0]
    return cfg


def validate(path) -> list[ConfigError]:
    """All schema problems in the file; an empty list means the config is valid."""
    return check_raw(read_raw(path))[0]


def default_config(experiment: str, seed: int = 0) -> ExperimentConfig:
    errors, cfg = check_raw({"schema_version": SCHEMA_VERSION, "experiment": experiment, "seed": seed})
    if errors:
        raise errors[0]
    return cfg
