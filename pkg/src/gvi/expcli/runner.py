"""Run an experiment across replicate seeds and write long-format results."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import GviError
from .config import ExperimentConfig
from .experiments import RUNNERS

CSV_HEADER = ("experiment", "seed", "param", "param_value", "metric", "value")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    seed: int
    param: str
    param_value: object
    metric: str
    value: float


def format_value(v) -> str:
    """Shortest round-tripping text for numbers, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return str(int(f)) if f.is_integer() and abs(f) < 1e15 else repr(f)
    return str(v)


def run_replicate(experiment: str, parameters: dict, seed: int) -> list[ResultRow]:
    """One replicate; a failure becomes a single ``failed = 1`` row."""
    try:
        raw = RUNNERS[experiment](parameters, seed)
    except (GviError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return [ResultRow(experiment, seed, "error", type(exc).__name__, "failed", 1.0)]
    rows = []
    for param, param_value, metric, value in raw:
        value = float(value)
        if math.isfinite(value):  # non-finite metrics are dropped rather than written
            rows.append(ResultRow(experiment, seed, param, param_value, metric, value))
    return rows


def resolve_jobs(jobs) -> int:
    env = os.environ.get("GVI_JOBS")
    if env:
        jobs = int(env)
    return max(1, int(jobs or 1))


def run(config: ExperimentConfig, jobs: int = 1) -> list[ResultRow]:
    """All rows, ordered by replicate seed then by emission order."""
    seeds = config.seeds()
    jobs = min(resolve_jobs(jobs), len(seeds))
    if jobs == 1:
        batches = [run_replicate(config.experiment, config.parameters, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_replicate, config.experiment, config.parameters, s) for s in seeds]
            batches = [f.result() for f in futures]
    return [row for batch in batches for row in batch]


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.experiment, r.seed, r.param, format_value(r.param_value), r.metric, format_value(r.value)])
    return buf.getvalue()


def manifest(config: ExperimentConfig, rows, csv_name: str) -> dict:
    from .. import __version__

    return {
        "experiment": config.experiment,
        "config_sha256": config.digest(),
        "seed": config.seed,
        "replicate_seeds": config.seeds(),
        "version": __version__,
        "csv": csv_name,
        "rows": len(rows),
        "failed_replicates": sorted({r.seed for r in rows if r.metric == "failed"}),
    }


def write_results(config: ExperimentConfig, rows, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{config.experiment}.csv"
    json_path = out / f"{config.experiment}.manifest.json"
    _atomic_write(csv_path, to_csv(rows))
    _atomic_write(json_path, json.dumps(manifest(config, rows, csv_path.name), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
