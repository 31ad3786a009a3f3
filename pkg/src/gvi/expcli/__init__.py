"""Declarative experiment runner writing long-format CSV results."""

from .config import EXPERIMENTS, SCHEMA_VERSION, ExperimentConfig, default_config, load, validate
from .runner import CSV_HEADER, ResultRow, run, write_results

__all__ = [
    "EXPERIMENTS",
    "SCHEMA_VERSION",
    "ExperimentConfig",
    "default_config",
    "load",
    "validate",
    "CSV_HEADER",
    "ResultRow",
    "run",
    "write_results",
]
