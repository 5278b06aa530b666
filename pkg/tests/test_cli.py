import csv
import inspect
import json

import pytest
from typer.testing import CliRunner

from cylcone.errors import ConfigError
from cylcone import errors, pipeline
from cylcone.pipeline import resolve_config
from main import app

runner = CliRunner()


def _read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def test_spectrum_command(tmp_path):
    result = runner.invoke(app, ["spectrum", "--p", "3", "--q", "3", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    report = _read_json(tmp_path / "spectrum.json")
    assert report["gamma"] == 2.0
    assert report["config"]["command"] == "spectrum"
    assert report["version"] == "0.1.0"
    assert 0.05 <= report["lambda"] <= 0.1


def test_doubling_on_cone_samples(tmp_path):
    result = runner.invoke(app, ["doubling", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    with open(tmp_path / "doubling.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 7
    assert all(float(row["d"]) == 0.0 for row in rows)
    assert (tmp_path / "cone_samples.csv").exists()

    # the written samples read back through --samples, relative to the output directory
    again = runner.invoke(app, ["doubling", "--out", str(tmp_path), "--samples", "cone_samples.csv"])
    assert again.exit_code == 0, again.output


def test_doubling_is_deterministic(tmp_path):
    for name in ("a", "b"):
        result = runner.invoke(app, ["doubling", "--out", str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    for name in ("doubling.csv", "cone_samples.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_jacobi_command(tmp_path):
    result = runner.invoke(app, ["jacobi", "--l", "3", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    report = _read_json(tmp_path / "jacobi.json")
    assert [t["coef"] for t in report["field"]["terms"]] == [1.0, -1.0]
    assert report["degree"] == 1.0


def test_invalid_config_exit_code(tmp_path):
    result = runner.invoke(app, ["spectrum", "--p", "0", "--out", str(tmp_path)])
    assert result.exit_code == 1
    error = _read_json(tmp_path / "error.json")
    assert error["error"] == "ConfigError"
    assert "cone.p" in error["message"]
    assert error["command"] == "spectrum"


def test_bad_beta_exit_code(tmp_path):
    result = runner.invoke(app, ["glue", "--beta", "3.0", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert _read_json(tmp_path / "error.json")["error"] == "BadBeta"


def test_certificate_failure_exit_code(tmp_path):
    result = runner.invoke(app, ["spectrum", "--C1", "1e-30", "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert _read_json(tmp_path / "error.json")["error"] == "GapUnattainable"


def test_sectioned_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"cone": {"p": 2, "q": 4}, "glue": {"beta": 1.2}, "seed": 5}))
    config = resolve_config("glue", path, {"q": 5})
    assert (config.p, config.q, config.beta, config.seed) == (2, 5, 1.2, 5)


def test_config_errors_name_fields(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"cone": {"r": 2}}))
    with pytest.raises(ConfigError, match="cone.r"):
        resolve_config("spectrum", path)
    with pytest.raises(ConfigError, match="barrier.p_barrier"):
        resolve_config("barrier", None, {"p_barrier": 4})
    with pytest.raises(ConfigError, match="command"):
        resolve_config("plot", None)


def test_sampled_barrier_command(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"barrier": {"eps": 0.01, "K": 4.0, "Q": 0.5, "p_barrier": 1,
                                            "f": 0.1}}))
    result = runner.invoke(app, ["barrier", "--sampled", "--config", str(path), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    report = _read_json(tmp_path / "barrier.json")
    assert report["sampled"] is True
    assert report["negativity_certificate"] < 0
    assert report["linearized_certificate"] < 0


def test_report_that_did_not_pass_writes_error(tmp_path):
    result = runner.invoke(app, ["three-annulus", "--A", "1e-6", "--cases", "3", "--out", str(tmp_path)])
    assert result.exit_code == 2
    error = _read_json(tmp_path / "error.json")
    assert error["error"] == "ReportFailed"
    assert error["command"] == "three-annulus"
    assert _read_json(tmp_path / "three_annulus.json")["failures"] > 0


def test_unexpected_error_exit_code(tmp_path, monkeypatch):
    def broken(config):
        raise RuntimeError("lost the table")

    monkeypatch.setitem(pipeline.RUNNERS, "spectrum", broken)
    result = runner.invoke(app, ["spectrum", "--out", str(tmp_path)])
    assert result.exit_code == 3
    error = _read_json(tmp_path / "error.json")
    assert error == {"command": "spectrum", "error": "RuntimeError", "message": "lost the table"}


def test_report_keys_are_sorted(tmp_path):
    result = runner.invoke(app, ["spectrum", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    report = _read_json(tmp_path / "spectrum.json")
    assert list(report) == sorted(report)
    assert list(report["config"]) == sorted(report["config"])


def test_every_error_class_is_documented():
    classes = [c for _, c in inspect.getmembers(errors, inspect.isclass) if issubclass(c, errors.CylconeError)]
    assert len(classes) > 20
    for cls in classes:
        assert cls.__doc__ and cls.__doc__.strip(), cls.__name__
