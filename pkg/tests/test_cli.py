import json

import pytest
from click.testing import CliRunner

from eiglab.cli import main
from eiglab.errors import NumericError


@pytest.fixture
def runner():
    return CliRunner()


def test_estimate_writes_summary_and_prints_result(runner, tmp_path):
    result = runner.invoke(main, [
        "estimate", "--model", "lg", "--xi", "1.0", "--estimator", "nmc",
        "--n", "1000", "--m", "32", "--seed", "7", "--out", str(tmp_path),
    ])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output.strip().splitlines()[-1])
    assert {"value", "std_error", "replicates", "likelihood_evals"} <= set(payload)
    summary = json.loads((tmp_path / "run_summary.json").read_text())
    assert summary["command"] == "estimate"
    assert summary["config"]["seed"] == 7
    assert len(summary["content_hash"]) == 64


def test_unknown_flag_exits_2_without_artifacts(runner, tmp_path):
    result = runner.invoke(main, [
        "estimate", "--model", "lg", "--xi", "1.0", "--bogus-flag", "3",
        "--seed", "1", "--out", str(tmp_path),
    ])
    assert result.exit_code == 2
    assert not (tmp_path / "run_summary.json").exists()


def test_misspelled_param_key_exits_2_and_names_it(runner, tmp_path):
    result = runner.invoke(main, [
        "estimate", "--model", "lg", "--params", '{"sigma": 2.0}', "--xi", "1.0",
        "--seed", "1", "--out", str(tmp_path),
    ])
    assert result.exit_code == 2
    assert "sigma" in result.output


def test_invalid_json_params_exit_2(runner, tmp_path):
    result = runner.invoke(main, [
        "estimate", "--model", "lg", "--params", "{not json", "--xi", "1.0",
        "--seed", "1", "--out", str(tmp_path),
    ])
    assert result.exit_code == 2


def test_capability_misuse_exits_2(runner, tmp_path):
    result = runner.invoke(main, [
        "estimate", "--model", "lg", "--xi", "1.0", "--estimator", "rb",
        "--seed", "1", "--out", str(tmp_path),
    ])
    assert result.exit_code == 2


def test_numeric_error_exits_3(runner, tmp_path, monkeypatch):
    import eiglab.cli as cli_mod

    def boom(*args, **kwargs):
        raise NumericError("synthetic blow-up")

    monkeypatch.setattr(cli_mod, "nmc_eig", boom)
    result = runner.invoke(main, [
        "estimate", "--model", "lg", "--xi", "1.0", "--estimator", "nmc",
        "--seed", "1", "--out", str(tmp_path),
    ])
    assert result.exit_code == 3
    assert "numeric error" in result.output


def test_study_runs_are_byte_identical(runner, tmp_path):
    args = [
        "study", "--model", "lg", "--xi", "1.0", "--estimator", "nmc",
        "--pairing", "sqrt", "--costs", "256,1024", "--replicates", "6", "--seed", "11",
    ]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert runner.invoke(main, args + ["--out", str(out_a)]).exit_code == 0
    assert runner.invoke(main, args + ["--out", str(out_b)]).exit_code == 0
    assert (out_a / "study.csv").read_bytes() == (out_b / "study.csv").read_bytes()
    a = json.loads((out_a / "run_summary.json").read_text())
    b = json.loads((out_b / "run_summary.json").read_text())
    assert a["content_hash"] == b["content_hash"]
    assert a["results"] == b["results"]


def test_optimize_and_trace_artifact(runner, tmp_path):
    result = runner.invoke(main, [
        "optimize", "--model", "lg", "--objective", "pce", "--steps", "40",
        "--restarts", "2", "--seed", "5", "--out", str(tmp_path),
    ])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output.strip().splitlines()[-1])
    assert abs(abs(payload["xi_star"][0]) - 1.0) < 0.2
    trace = (tmp_path / "opt_trace.csv").read_text().splitlines()
    assert trace[0] == "step,xi0,bound_estimate"


def test_sequential_transcript(runner, tmp_path):
    result = runner.invoke(main, [
        "sequential", "--model", "probit", "--strategy", "greedy-grid", "--t", "2",
        "--seed", "3", "--particles", "2048", "--out", str(tmp_path),
    ])
    assert result.exit_code == 0, result.output
    rows = json.loads((tmp_path / "transcript.json").read_text())
    assert len(rows) == 2 and rows[0]["t"] == 1


def test_policy_roundtrip_via_cli(runner, tmp_path):
    train = runner.invoke(main, [
        "train-policy", "--model", "lg", "--t", "2", "--b", "32", "--l", "7",
        "--steps", "10", "--seed", "9", "--out", str(tmp_path),
    ])
    assert train.exit_code == 0, train.output
    assert (tmp_path / "policy.eigp").exists()
    seq = runner.invoke(main, [
        "sequential", "--model", "lg", "--strategy", "policy",
        "--checkpoint", str(tmp_path / "policy.eigp"), "--t", "2",
        "--seed", "10", "--particles", "2048", "--out", str(tmp_path / "run"),
    ])
    assert seq.exit_code == 0, seq.output


def test_policy_strategy_requires_checkpoint(runner, tmp_path):
    result = runner.invoke(main, [
        "sequential", "--model", "lg", "--strategy", "policy", "--t", "2",
        "--seed", "1", "--out", str(tmp_path),
    ])
    assert result.exit_code == 2


def test_models_listing(runner):
    result = runner.invoke(main, ["models"])
    assert result.exit_code == 0
    ids = {m["id"] for m in json.loads(result.output)}
    assert ids == {"lg", "location", "probit"}
