import json
import os

import numpy as np
import pandas as pd
import pytest

from planner.benchmarks import meeting_grid
from planner.file_io import load_model, load_policy, load_run_log
from planner.global_defaults import (EXIT_BENCH_MISS, EXIT_INPUT_ERROR, EXIT_OK, PROBLEMS_DIR)
from planner.model import model_to_dict
from planner.solve import check_valid_inputs, main

BROADCAST = os.path.join(PROBLEMS_DIR, "broadcast.dpomdp")


@pytest.fixture
def run(tmp_path):
    """Call the command line front end with logs kept below tmp_path."""
    def _run(*argv):
        return main(["--log-dir", str(tmp_path / "logs"), *map(str, argv)])
    return _run


def solve_broadcast(run, out, *extra):
    return run("solve", "--model", BROADCAST, "--nodes", 1, 1, "--restarts", 2, "--seed", 7,
               "--max-iters", 5, "--out", out, *extra)


def test_solve_writes_artifacts(run, tmp_path):
    out = tmp_path / "run"
    assert solve_broadcast(run, out) == EXIT_OK
    for name in ("policy.json", "runlog_restart0.jsonl", "runlog_restart1.jsonl", "summary.json", "timings.csv"):
        assert (out / name).exists(), name

    summary = json.loads((out / "summary.json").read_text())
    assert summary["nodes"] == [1, 1]
    assert [entry["restart"] for entry in summary["runs"]] == [0, 1]
    assert summary["best_value"] == max(entry["value"] for entry in summary["runs"])

    policy, provenance = load_policy(str(out / "policy.json"))
    assert policy.nodes == (1, 1)
    assert provenance["seed"] == [7, summary["best_restart"]]
    assert provenance["model_hash"] == load_model(BROADCAST).model_hash

    lines = load_run_log(str(out / "runlog_restart0.jsonl"))
    assert lines[-1]["final"] is True
    assert lines[0]["iter"] == 0
    assert len(lines) <= 5 + 2

    timings = pd.read_csv(out / "timings.csv")
    assert list(timings.columns) == ["restart", "iters", "ms"]


def test_solve_summary_is_deterministic(run, tmp_path):
    assert solve_broadcast(run, tmp_path / "a") == EXIT_OK
    assert solve_broadcast(run, tmp_path / "b", "--jobs", 2) == EXIT_OK
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()


def test_solve_csv_summary(run, tmp_path):
    out = tmp_path / "run"
    assert solve_broadcast(run, out, "--format", "csv") == EXIT_OK
    summary = pd.read_csv(out / "summary.csv")
    assert len(summary) == 2
    assert summary["best"].sum() == 1


def test_evaluate_reproduces_reported_value(run, tmp_path, capsys):
    out = tmp_path / "run"
    assert solve_broadcast(run, out) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    report_path = tmp_path / "report.json"
    assert run("evaluate", "--model", BROADCAST, "--policy", out / "policy.json", "--out", report_path) == EXIT_OK
    report = json.loads(report_path.read_text())
    assert report["v_b0"] == pytest.approx(summary["best_value"], abs=1e-6)
    assert report["method"] == "iterative"
    assert '"v_b0"' in capsys.readouterr().out


def test_evaluate_rejects_policy_of_other_model(run, tmp_path):
    out = tmp_path / "run"
    assert solve_broadcast(run, out) == EXIT_OK
    tiger = os.path.join(PROBLEMS_DIR, "dectiger.dpomdp")
    assert run("evaluate", "--model", tiger, "--policy", out / "policy.json") == EXIT_INPUT_ERROR


def test_simulate_is_reproducible(run, tmp_path):
    out = tmp_path / "run"
    assert solve_broadcast(run, out) == EXIT_OK
    reports = []
    for name in ("sim_a.json", "sim_b.json"):
        assert run("simulate", "--model", BROADCAST, "--policy", out / "policy.json", "--episodes", 500,
                   "--seed", 3, "--out", tmp_path / name) == EXIT_OK
        reports.append(json.loads((tmp_path / name).read_text()))
    assert reports[0] == reports[1]
    assert reports[0]["episodes"] == 500 and reports[0]["horizon"] == 132


@pytest.mark.parametrize("argv", [
    ("solve", "--model", "missing.dpomdp"),
    ("solve", "--model", BROADCAST, "--nodes", 0, 1),
    ("solve", "--model", BROADCAST, "--cutoff", "adaptive:0"),
    ("solve", "--model", BROADCAST, "--lik-tol", -1),
    ("solve", "--model", "builtin:no_such_model"),
    ("simulate", "--model", BROADCAST, "--policy", "missing.json"),
])
def test_input_errors_exit_1(run, argv):
    assert run(*argv) == EXIT_INPUT_ERROR


def test_validate(run, tmp_path):
    assert run("validate", "--model", BROADCAST) == EXIT_OK
    data = model_to_dict(load_model(BROADCAST))
    data["observation"][0][0][0] = [[0.5, 0.0], [0.0, 0.0]]
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps(data))
    assert run("validate", "--model", broken) == EXIT_INPUT_ERROR


def test_export_builtin_model(run, tmp_path):
    path = tmp_path / "grid.dpomdp"
    assert run("export-model", "--model", "builtin:meeting_grid_2x2", "--out", path) == EXIT_OK
    assert run("validate", "--model", path) == EXIT_OK
    exported = load_model(str(path))
    np.testing.assert_allclose(exported.transition, meeting_grid(2).transition, atol=1e-15)
    np.testing.assert_array_equal(exported.reward, meeting_grid(2).reward)


def write_suite(path, min_value):
    path.write_text("problem,model,n1,n2,restarts,reference,min_value,min_likelihood\n"
                    f"broadcast,{BROADCAST},1,1,1,9.05,{min_value},\n")


def test_bench_ci_exit_codes(run, tmp_path):
    suite = tmp_path / "suite.csv"
    write_suite(suite, 100.0)
    out = tmp_path / "bench"
    assert run("bench", "--suite", suite, "--out", out, "--max-iters", 3) == EXIT_OK
    assert run("bench", "--suite", suite, "--out", out, "--max-iters", 3, "--ci") == EXIT_BENCH_MISS

    results = pd.read_csv(out / "results.csv")
    assert list(results.columns) == ["problem", "n1", "n2", "restart", "iters", "likelihood", "value", "ms"]
    assert len(results) == 1
    aggregate = json.loads((out / "aggregate.json").read_text())
    assert aggregate[0]["passed"] is False

    write_suite(suite, 0.0)
    assert run("bench", "--suite", suite, "--out", out, "--max-iters", 3, "--ci") == EXIT_OK


def test_bench_missing_model_file(run, tmp_path):
    suite = tmp_path / "suite.csv"
    suite.write_text("problem,model,n1,n2,restarts,reference,min_value,min_likelihood\n"
                     "rovers,mars.dpomdp,2,2,3,9.9,9.0,\n")
    assert run("bench", "--suite", suite, "--out", tmp_path / "bench") == EXIT_INPUT_ERROR


def test_check_valid_inputs():
    check_valid_inputs({"nodes_1": 1, "restarts": 3, "max_iters": 0, "lik_tol": 1e-8, "cutoff": "fixed:0"})
    with pytest.raises(ValueError, match="restarts"):
        check_valid_inputs({"restarts": 0})
    with pytest.raises(ValueError, match="audit-every"):
        check_valid_inputs({"audit_every": -1})


def test_logs_are_written(run, tmp_path):
    assert run("validate", "--model", BROADCAST) == EXIT_OK
    logs = tmp_path / "logs"
    assert any(name.endswith(".log") for name in os.listdir(logs))
    assert any(name.endswith("_DEBUG.log") for name in os.listdir(logs / "debug_info"))
