import csv
import io
import json
from pathlib import Path

import pytest

from gvi.errors import ConfigError, ParseError
from gvi.expcli import cli, config, experiments, runner

CONFIGS = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.toml"))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def small_config(tmp_path, experiment="divergence-magnitude", extra=""):
    return write(
        tmp_path,
        "c.toml",
        f'schema_version = 1\nexperiment = "{experiment}"\nseed = 3\noutput = "{tmp_path / "out"}"\n\n[parameters]\n{extra}',
    )


def test_every_experiment_has_a_shipped_config():
    assert sorted(p.stem for p in CONFIGS) == sorted(config.EXPERIMENTS)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert config.validate(path) == []
    assert cli.main(["validate", str(path)]) == 0


def test_json_and_toml_configs_are_equivalent(tmp_path):
    toml_path = small_config(tmp_path, extra="hyper_grid = [0.5, 2.0]\n")
    data = {
        "schema_version": 1,
        "experiment": "divergence-magnitude",
        "seed": 3,
        "output": str(tmp_path / "out"),
        "parameters": {"hyper_grid": [0.5, 2.0]},
    }
    json_path = write(tmp_path, "c.json", json.dumps(data))
    assert config.load(toml_path).digest() == config.load(json_path).digest()


def test_errors_carry_field_paths(tmp_path):
    p = write(
        tmp_path,
        "bad.toml",
        'schema_version = 2\nexperiment = "prior-sweep"\nseed = -1\n[parameters]\n'
        'alpha_grid = [1.0]\nreplicates = 0\nwhatever = 1\nseeds = [1, 1]\n',
    )
    fields = {e.field for e in config.validate(p)}
    assert fields == {
        "schema_version",
        "seed",
        "parameters.alpha_grid",
        "parameters.replicates",
        "parameters.whatever",
        "parameters.seeds",
    }
    assert cli.main(["validate", str(p)]) == 1


def test_unknown_experiment(tmp_path):
    p = write(tmp_path, "bad.toml", 'schema_version = 1\nexperiment = "nope"\n')
    (err,) = config.validate(p)
    assert err.field == "experiment"
    with pytest.raises(ConfigError):
        config.load(p)


def test_toml_syntax_errors_report_position(tmp_path):
    p = write(tmp_path, "bad.toml", 'schema_version = 1\nexperiment = \n')
    with pytest.raises(ParseError) as info:
        config.read_raw(p)
    assert (info.value.line, info.value.column) == (2, 14)


def test_json_syntax_errors_report_position(tmp_path):
    p = write(tmp_path, "bad.json", '{\n  "schema_version": 1,\n  "experiment": }\n')
    with pytest.raises(ParseError) as info:
        config.read_raw(p)
    assert info.value.line == 3


def test_divergence_and_score_names():
    assert config.parse_divergence("renyi(0.5)") == ("renyi", 0.5)
    assert config.parse_divergence("kld") == ("kld", None)
    assert config.parse_score("gamma(1.05)") == ("gamma", 1.05)
    for bad in ("renyi", "kld(2)", "renyi(1)", "magic(2)"):
        with pytest.raises(ValueError):
            config.parse_divergence(bad)


def test_replicate_seeds():
    cfg = config.default_config("contamination", seed=10)
    assert cfg.seeds() == list(range(10, 30))
    explicit = config.ExperimentConfig("contamination", 0, "out", {**cfg.parameters, "seeds": [7, 3]})
    assert explicit.seeds() == [7, 3]


def test_csv_schema_and_byte_identical_reruns(tmp_path):
    cfg = config.load(small_config(tmp_path, "contamination", "replicates = 3\n"))
    first = runner.to_csv(runner.run(cfg))
    second = runner.to_csv(runner.run(cfg, jobs=2))
    assert first == second
    rows = list(csv.reader(io.StringIO(first)))
    assert rows[0] == ["experiment", "seed", "param", "param_value", "metric", "value"]
    assert {r[1] for r in rows[1:]} == {"3", "4", "5"}


def test_run_writes_csv_and_manifest(tmp_path):
    path = small_config(tmp_path)
    out = tmp_path / "results"
    assert cli.main(["run", str(path), "--out", str(out), "--seed", "4"]) == 0
    text = (out / "divergence-magnitude.csv").read_text()
    assert text.startswith("experiment,seed,param,param_value,metric,value\n")
    manifest = json.loads((out / "divergence-magnitude.manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["replicate_seeds"] == [4]
    assert manifest["config_sha256"] == config.load(path).with_seed(4).digest()
    assert set(manifest) == {"experiment", "config_sha256", "seed", "replicate_seeds", "version", "csv", "rows", "failed_replicates"}
    assert cli.main(["run", str(path), "--out", str(tmp_path / "again"), "--seed", "4"]) == 0
    assert (tmp_path / "again" / "divergence-magnitude.csv").read_text() == text


def test_failed_replicates_are_recorded(monkeypatch):
    real = experiments.RUNNERS["contamination"]

    def flaky(params, seed):
        if seed == 1:
            raise FloatingPointError("boom")
        return real(params, seed)

    monkeypatch.setitem(experiments.RUNNERS, "contamination", flaky)
    cfg = config.default_config("contamination")
    cfg = config.ExperimentConfig(cfg.experiment, 0, "out", {**cfg.parameters, "replicates": 3})
    rows = runner.run(cfg)
    failed = [r for r in rows if r.metric == "failed"]
    assert [(r.seed, r.value) for r in failed] == [(1, 1.0)]
    assert {r.seed for r in rows} == {0, 1, 2}


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["list-experiments"]) == 0
    assert capsys.readouterr().out.split() == list(config.EXPERIMENTS)
    bad = write(tmp_path, "bad.toml", "schema_version = 1\n")
    assert cli.main(["run", str(bad)]) == 1
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == 1

    def broken(*a, **k):
        raise RuntimeError("disk full")

    monkeypatch.setattr(runner, "write_results", broken)
    assert cli.main(["run", str(small_config(tmp_path)), "--out", str(tmp_path / "o")]) == 2


def test_jobs_environment_override(monkeypatch):
    monkeypatch.setenv("GVI_JOBS", "3")
    assert runner.resolve_jobs(1) == 3
    monkeypatch.delenv("GVI_JOBS")
    assert runner.resolve_jobs(None) == 1


def test_number_formatting_round_trips():
    for v in (0.1, 1e-300, 123456.789, 2.0, -0.0):
        assert float(runner.format_value(v)) == v
    assert runner.format_value(5.0) == "5"
    assert runner.format_value("renyi(0.5)") == "renyi(0.5)"


def test_blr_marginals_ordering():
    rows = runner.run(config.default_config("blr-marginals"))
    sd = {r.param_value: r.value for r in rows if r.metric == "sd_theta1"}
    assert sd["renyi(0.5)"] > sd["kld"] > sd["renyi(2)"]
    assert sd["exact"] > sd["kld"]
