import csv
import json
import subprocess
import sys

import pytest

from pln.cli import load_config, main, parse_classes
from pln.errors import ConfigError


def write_config(tmp_path, name="cfg.json", **data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run_cli(tmp_path, task, cfg, out="out", *extra):
    return main([task, "--config", str(cfg), "--out", str(tmp_path / out), *extra])


def report(tmp_path, out="out"):
    return json.loads((tmp_path / out / "report.json").read_text())


@pytest.mark.parametrize("task", ["check-hypotheses", "condition-n", "spectrum",
                                  "appendix-variant"])
def test_t1_tasks_pass(tmp_path, task):
    cfg = write_config(tmp_path, model="T1", grid=16)
    assert run_cli(tmp_path, task, cfg) == 0
    rep = report(tmp_path)
    assert rep["verdict"] is True and rep["exit_status"] == 0
    assert rep["format_version"] == 1 and rep["task"] == task
    assert (tmp_path / "out" / "timing.json").exists()


def test_failing_class_exits_one(tmp_path):
    cfg = write_config(tmp_path, model="half-nu", grid=8, classes=[[0, 2]])
    assert run_cli(tmp_path, "condition-n", cfg) == 1
    rep = report(tmp_path)
    assert rep["results"]["classes"]["0,2"]["verdict"] is False
    assert float(rep["results"]["closed_form"]["0,2"]["rotation_numbers"][0]) == 1.0


def test_broken_model_flagged(tmp_path):
    cfg = write_config(tmp_path, model="broken-commutation", grid=8)
    assert run_cli(tmp_path, "check-hypotheses", cfg) == 1
    assert report(tmp_path)["results"]["commutation_ok"] is False


def test_integer_rotation_criterion_exits_one(tmp_path):
    cfg = write_config(tmp_path, frequency={"s": 2, "n": 3,
                                            "lambda": [["1", "2", "5"], ["0", "1", "0"]],
                                            "windings": [[1, 0]]})
    assert run_cli(tmp_path, "oscillator-criterion", cfg) == 1
    rep = report(tmp_path)
    assert rep["results"]["criterion"][0]["Q"] == ["5"]
    assert (tmp_path / "out" / "criterion.csv").exists()


def test_criterion_batch_file(tmp_path):
    (tmp_path / "rows.csv").write_text("s,n,lambda,winding\n2,3,1 2 1/3 0 1 2/7,1 1\n")
    cfg = write_config(tmp_path, batch="rows.csv")
    assert run_cli(tmp_path, "oscillator-criterion", cfg) == 0


def test_missing_config_exits_two(tmp_path):
    assert run_cli(tmp_path, "spectrum", tmp_path / "nope.json") == 2
    assert report(tmp_path)["exit_status"] == 2


@pytest.mark.parametrize("data", [
    {"model": "T1", "grid": 4},
    {"model": "T1", "tol_n": -1},
    {"model": "no-such-model"},
    {"model": "T1", "classes": [[0]]},
])
def test_bad_configs_exit_two(tmp_path, data):
    cfg = write_config(tmp_path, **data)
    assert run_cli(tmp_path, "condition-n", cfg) == 2


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, model="T1", grid=8)
    proc = subprocess.run([sys.executable, "-m", "pln", "condition-n", "--config", str(cfg),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_reports_are_deterministic(tmp_path):
    cfg = write_config(tmp_path, model="T2", grid=8)
    assert run_cli(tmp_path, "spectrum", cfg, "a") == 0
    assert run_cli(tmp_path, "spectrum", cfg, "b") == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    assert a == b


def test_class_override(tmp_path):
    cfg = write_config(tmp_path, model="T1", grid=8)
    assert run_cli(tmp_path, "condition-n", cfg, "out", "--classes", "2") == 0
    assert list(report(tmp_path)["results"]["classes"]) == ["2"]


def test_parse_classes():
    assert parse_classes("1,0;0,1") == [[1, 0], [0, 1]]
    with pytest.raises(ConfigError):
        parse_classes("1,x")


def test_load_config_validates(tmp_path):
    cfg = write_config(tmp_path, model="T1")
    with pytest.raises(ConfigError):
        load_config(cfg, "not-a-task")


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_continue_single_torus(tmp_path):
    cfg = write_config(tmp_path, model="T2-perturbed", grid=8,
                       continuation={"max_range": 0.0})
    assert run_cli(tmp_path, "continue", cfg) == 0
    margins = rows(tmp_path / "out" / "margins.csv")
    assert len(margins) == 1
    for name in ("family.json", "family.csv", "eigenvalues.csv", "sections.csv"):
        assert (tmp_path / "out" / name).exists()


def test_continue_integrable_margins_constant(tmp_path):
    cfg = write_config(tmp_path, model="T2", grid=8,
                       continuation={"max_range": 0.1, "direction": [1, 0]})
    assert run_cli(tmp_path, "continue", cfg) == 0
    margins = [float(r["margin"]) for r in rows(tmp_path / "out" / "margins.csv")]
    assert len(margins) > 2 and max(margins) - min(margins) < 1e-8
    eig = rows(tmp_path / "out" / "eigenvalues.csv")
    assert len(eig) == 2 * len(margins)
    sec = rows(tmp_path / "out" / "sections.csv")
    assert len(sec) == 64 * len(margins)


def test_bad_step_policy(tmp_path):
    cfg = write_config(tmp_path, model="T2", grid=8,
                       continuation={"max_range": 0.1, "step": {"speed": 3}})
    assert run_cli(tmp_path, "continue", cfg) == 2


@pytest.mark.slow
def test_continue_class_switch(tmp_path):
    cfg = write_config(tmp_path, model="class-switch", grid=8,
                       continuation={"max_range": 0.2})
    assert run_cli(tmp_path, "continue", cfg) == 0
    events = [r for r in rows(tmp_path / "out" / "margins.csv") if r["event"]]
    assert len(events) == 1 and events[0]["event"].startswith("class-switch 1,2 -> 1,1")
