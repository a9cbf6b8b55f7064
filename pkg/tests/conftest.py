from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
RUNS = ROOT / "runs"
sys.path.insert(0, str(Path(__file__).resolve().parent))

ZERO = {
    "caas": {"cluster_provision_s": 0, "pod_schedule_latency_s": 0, "container_startup_s": 0,
             "container_teardown_s": 0, "cluster_teardown_s": 0, "nodes": 1,
             "node": {"vcpus": 16, "gpus": 0, "memory_mb": 65536}},
    "hpc": {"queue_wait_s": 0, "pilot_bootstrap_s": 0, "pilot_teardown_s": 0,
            "task_launch_s": 0, "nodes": 1, "cores_per_node": 16},
}

CLOUD = {
    "caas": {"cluster_provision_s": 5.0, "pod_schedule_latency_s": 0.5, "container_startup_s": 1.0,
             "container_teardown_s": 0.5, "cluster_teardown_s": 3.0, "nodes": 4,
             "node": {"vcpus": 16, "gpus": 2, "memory_mb": 65536}},
    "hpc": {"queue_wait_s": 30.0, "pilot_bootstrap_s": 10.0, "pilot_teardown_s": 2.0,
            "task_launch_s": 0.1, "nodes": 2, "cores_per_node": 64, "gpus_per_node": 2},
}


def caas(name, scenario="cloud", vcpus=16, gpus=2, nodes=4, **creds):
    return {"name": name, "kind": "CAAS", "endpoint": f"sim:{scenario}",
            "credentials": creds or {"token": "t"},
            "limits": {"max_nodes": nodes, "vcpus_per_node": vcpus, "gpus_per_node": gpus,
                       "memory_mb_per_node": 65536}}


def hpc(name, scenario="cloud", vcpus=64, gpus=2, nodes=2, **limits):
    lim = {"max_nodes": nodes, "vcpus_per_node": vcpus, "gpus_per_node": gpus,
           "memory_mb_per_node": 262144}
    lim.update(limits)
    return {"name": name, "kind": "HPC", "endpoint": f"sim:{scenario}",
            "credentials": {"username": "u", "allocation": "a"}, "limits": lim}


def registry_doc(*providers, scenarios=None):
    return {"providers": list(providers),
            "scenarios": scenarios or {"cloud": CLOUD, "zero": ZERO}}


def pytest_configure(config):
    config._acceptance = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: int(k.split()[0])):
        ok, detail = results[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")


@pytest.fixture
def acceptance(request):
    """Record one criterion's verdict for the terminal summary."""

    def record(key, ok, detail):
        request.config._acceptance[key] = (bool(ok), detail)

    return record


@pytest.fixture
def cpu_count():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()


def drive_manager(doc, name, tasks, options=None, seed=None):
    """Run one provider's manager in-thread; returns (manager, records, trace)."""
    from hydrabroker.core import RunTrace, TaskRecord, TickClock
    from hydrabroker.managers import manager_for
    from hydrabroker.providers import load_registry
    from hydrabroker.sim import open_backend
    from hydrabroker.sinks import BrokerState, LocalSink

    reg = load_registry(doc)
    cfg = reg.providers[name]
    records = {t.id: TaskRecord(t) for t in tasks}
    trace = RunTrace()
    state = BrokerState(records, trace, [name])
    sink = LocalSink(state, name, TickClock())
    mgr = manager_for(cfg.kind)(cfg, open_backend(cfg, reg, seed), sink, options)
    mgr.execute(list(tasks))
    mgr.teardown()
    return mgr, records, trace
