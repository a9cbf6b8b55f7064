from __future__ import annotations

import copy
import hashlib
import subprocess
import sys

import pytest
import yaml

from conftest import CLOUD, RUNS, caas, hpc
from hydrabroker import cli
from hydrabroker.metrics import METRICS_COLUMNS, TRACE_COLUMNS, read_metrics_csv, read_trace_csv
from hydrabroker.rundesc import EXIT_ERROR, EXIT_OK, EXIT_TERMINATED, EXIT_USAGE


def write_run(tmp_path, name="r.run", workload=None, providers=None, scenarios=None, **top):
    doc = {
        "run_id": "cli-test", "seed": 3, "mode": "MCPP",
        "broker": {"executor": "thread", "manifests": "memory", "clock": "tick"},
        "providers": providers or [caas("c1"), hpc("h1")],
        "scenarios": scenarios or {"cloud": CLOUD},
        "workload": workload or {"groups": [{"count": 40, "prefix": "t-", "cpus": [1, 4],
                                             "duration_s": [1.0, 3.0]}]},
    }
    doc.update(top)
    f = tmp_path / name
    f.write_text(yaml.safe_dump(doc, sort_keys=False))
    return f


def digest(path):
    return hashlib.md5(path.read_bytes()).hexdigest()


def test_validate_ok_and_defective(tmp_path, capsys):
    assert cli.main(["validate", str(write_run(tmp_path))]) == EXIT_OK
    assert "ok [c1(CAAS), h1(HPC)]" in capsys.readouterr().out
    bad = write_run(tmp_path, "bad.run", providers=[caas("c1", other="x")])
    assert cli.main(["validate", str(bad)]) == EXIT_ERROR
    assert "missing key: token" in capsys.readouterr().err
    (tmp_path / "junk.run").write_text("providers: [")
    assert cli.main(["validate", str(tmp_path / "junk.run")]) == EXIT_ERROR


def test_usage_errors():
    assert cli.main([]) == EXIT_USAGE
    assert cli.main(["launch", "x"]) == EXIT_USAGE
    assert cli.main(["submit"]) == EXIT_USAGE


def test_validate_never_acquires(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("validate must not build a broker")

    monkeypatch.setattr("hydrabroker.rundesc.Broker", boom)
    monkeypatch.setattr("hydrabroker.sim.backends.open_backend", boom)
    assert cli.main(["validate", str(write_run(tmp_path))]) == EXIT_OK
    assert sorted(p.name for p in tmp_path.iterdir()) == ["r.run"]


@pytest.mark.parametrize("name", sorted(p.name for p in RUNS.glob("*.run")))
def test_shipped_descriptions_validate(name):
    assert cli.main(["validate", str(RUNS / name)]) == EXIT_OK


def test_submit_writes_schema_exact_csvs(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["submit", str(write_run(tmp_path)), "--out", str(out)]) == EXIT_OK
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)
    assert (out / "metrics.csv").read_text().splitlines()[0] == ",".join(METRICS_COLUMNS)
    run_id, events = read_trace_csv(out / "trace.csv")
    rows = read_metrics_csv(out / "metrics.csv")
    assert run_id == "cli-test"
    assert [r["provider"] for r in rows] == ["c1", "h1", "ALL"]
    assert sum(int(r["tasks"]) for r in rows[:-1]) == int(rows[-1]["tasks"]) == 40
    done = {e.entity_id for e in events if e.name == "task_done"}
    assert len(done) == 40


def test_out_directory_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "env-out"
    monkeypatch.setenv("HYDRABROKER_OUT", str(target))
    assert cli.main(["submit", str(write_run(tmp_path, output="ignored"))]) == EXIT_OK
    assert (target / "trace.csv").exists() and not (tmp_path / "ignored").exists()


def test_experiment_repeats_and_is_reproducible(tmp_path):
    f = write_run(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["experiment", str(f), "--out", str(out), "--repeat", "3", "--seed", "11"]) == 0
    tags = sorted(p.name for p in a.iterdir() if p.is_dir())
    assert tags == ["r00", "r01", "r02"]
    for t in tags:
        for name in ("trace.csv", "metrics.csv"):
            assert digest(a / t / name) == digest(b / t / name)
    assert digest(a / "summary.csv") == digest(b / "summary.csv")
    lines = (a / "summary.csv").read_text().splitlines()
    assert lines[0].split(",") == list(cli.SUMMARY_COLUMNS)
    assert len(lines) == 1 + 3 and all(",3," in line for line in lines[1:])
    # different seeds draw different workloads
    assert digest(a / "r00" / "trace.csv") != digest(a / "r01" / "trace.csv")


def test_experiment_sweep_tags(tmp_path):
    f = write_run(tmp_path, sweep={"scale": [1, 2]},
                  workload={"groups": [{"count": 10, "prefix": "t-", "provider": "c1"}]})
    out = tmp_path / "o"
    assert cli.main(["experiment", str(f), "--out", str(out), "--repeat", "2"]) == 0
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == [
        "x1-r00", "x1-r01", "x2-r00", "x2-r01"]
    rows = {(r.split(",")[0], r.split(",")[1]): r.split(",")[3]
            for r in (out / "summary.csv").read_text().splitlines()[1:]}
    assert rows[("cli-test-x1", "c1")] == "10" and rows[("cli-test-x2", "c1")] == "20"
    assert cli.main(["experiment", str(f), "--out", str(out), "--repeat", "0"]) == EXIT_USAGE


def test_terminate_all_exit_code(tmp_path):
    sc = copy.deepcopy(CLOUD)
    sc["faults"] = {"exit_codes": {"t-00003": 1}}
    f = write_run(tmp_path, providers=[caas("c1")], scenarios={"cloud": sc},
                  workload={"on_task_failure": "TERMINATE_ALL",
                            "groups": [{"count": 30, "prefix": "t-", "duration_s": 5.0}]})
    assert cli.main(["submit", str(f), "--out", str(tmp_path / "o")]) == EXIT_TERMINATED
    rows = read_metrics_csv(tmp_path / "o" / "metrics.csv")
    assert rows[-1]["provider"] == "ALL"


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hydrabroker", "validate", str(write_run(tmp_path))],
                       capture_output=True, text=True, timeout=60)
    assert r.returncode == 0 and "ok" in r.stdout
