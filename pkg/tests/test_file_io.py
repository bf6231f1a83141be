import json
import os

import pytest

from planner.controller import init_random
from planner.em import EmConfig, em_solve
from planner.file_io import (cleanup_old_files, load_policy, load_run_log, load_suite, save_policy, save_run_log,
                             save_summary)
from planner.global_defaults import SUITES_DIR


def test_bundled_suites():
    table1 = load_suite(os.path.join(SUITES_DIR, "table1.csv"))
    assert table1["n1"].tolist() == [1, 2, 3, 4]
    assert (table1["min_value"] == 9.0).all()
    standard = load_suite(os.path.join(SUITES_DIR, "standard.csv"))
    assert set(standard["problem"]) == {"recycling_reconstructed", "meeting_grid", "dectiger"}
    assert standard.loc[standard["problem"] == "recycling_reconstructed", "min_value"].isna().all()
    assert all(os.path.exists(model) or model.startswith("builtin:") for model in standard["model"])


def test_suite_without_bundled_instances():
    with pytest.raises(FileNotFoundError, match="mars.dpomdp"):
        load_suite(os.path.join(SUITES_DIR, "large.csv"))


def test_suite_column_checks(tmp_path):
    path = tmp_path / "suite.csv"
    path.write_text("problem,model,n1\nbroadcast,broadcast.dpomdp,1\n")
    with pytest.raises(ValueError, match="missing columns"):
        load_suite(str(path))
    path.write_text("problem,model,n1,n2,restarts,reference,min_value,min_likelihood\n"
                    "broadcast,broadcast.dpomdp,0,1,1,9.05,9.0,\n")
    with pytest.raises(ValueError, match="n1"):
        load_suite(str(path))


def test_policy_and_run_log_files(tiger, tmp_path):
    p0 = init_random(tiger, 2, 2, 0)
    policy, run_log = em_solve(tiger, p0, EmConfig(max_iters=3))
    save_policy(policy, str(tmp_path / "out" / "policy.json"), {"restart": 0})
    again, provenance = load_policy(str(tmp_path / "out" / "policy.json"))
    assert again.policy_hash == policy.policy_hash
    assert provenance == {"restart": 0}

    save_run_log(run_log, str(tmp_path / "out" / "run.jsonl"))
    lines = load_run_log(str(tmp_path / "out" / "run.jsonl"))
    assert len(lines) == len(run_log.records) + 1
    assert lines[-1]["policy_hash"] == policy.policy_hash


def test_json_summary_is_sorted(tmp_path):
    summary = {"problem": "x", "best_restart": 1, "runs": [{"restart": 0, "value": 1.0},
                                                            {"restart": 1, "value": 2.0}]}
    save_summary(summary, str(tmp_path / "summary.json"))
    text = (tmp_path / "summary.json").read_text()
    assert json.loads(text) == summary
    assert text.index('"best_restart"') < text.index('"problem"')


def test_cleanup_keeps_newest(tmp_path):
    for i in range(5):
        path = tmp_path / f"run{i}.log"
        path.write_text("x")
        os.utime(path, (i, i))
    (tmp_path / "notes.txt").write_text("kept")
    cleanup_old_files(str(tmp_path), keep_last=2)
    assert sorted(os.listdir(tmp_path)) == ["notes.txt", "run3.log", "run4.log"]
