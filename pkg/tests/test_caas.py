from __future__ import annotations

import copy
import json

import pytest

from conftest import CLOUD, caas, drive_manager, registry_doc
from hydrabroker.caas import build_manifests, manifest_bytes, partition, submit_batch
from hydrabroker.core import TaskDescription, TaskState
from hydrabroker.managers import ManagerOptions, PartitionMode
from hydrabroker.resources import NodeCapacity, ResourceRequest
from hydrabroker.sim import SimCaasBackend, parse_scenario
from hydrabroker.sim.engine import replay_capacity, CAAS_LABELS

MCPP = PartitionMode.MCPP


def tasks(n, **kw):
    kw.setdefault("expected_duration_s", 2.0)
    return [TaskDescription(f"t{i}", image="busybox", command=("true",), **kw) for i in range(n)]


def faulty(**faults):
    sc = copy.deepcopy(CLOUD)
    sc["faults"] = faults
    return registry_doc(caas("c1", scenario="bad"), scenarios={"bad": sc})


class Recorder:
    def __init__(self):
        self.events = []
        self.t = 0.0

    def now(self):
        self.t += 1.0
        return self.t

    def event(self, entity, name, t, clock):
        self.events.append((entity, name, t))


def test_manifest_schema_and_determinism():
    pods = partition(tasks(2), NodeCapacity(4, 0, 4096), MCPP)
    assert len(pods) == 1
    a, b = build_manifests(pods), build_manifests(pods)
    assert a[0].body == b[0].body == manifest_bytes(pods[0])
    doc = json.loads(a[0].body)
    assert set(doc) == {"pod_id", "containers"}
    assert [c["name"] for c in doc["containers"]] == ["t0", "t1"]
    assert doc["containers"][0] == {"name": "t0", "image": "busybox", "command": ["true"],
                                    "resources": {"cpu": 1, "gpu": 0, "memory_mb": 1024}}


def test_manifests_emit_events_and_disk_mode(tmp_path):
    assert build_manifests([]) == []
    pods = partition(tasks(5), NodeCapacity(4, 0, 65536), PartitionMode.SCPP, prefix="c1.pod")
    rec = Recorder()
    ms = build_manifests(pods, rec, "disk", tmp_path, "c1")
    files = sorted((tmp_path / "manifests" / "c1").iterdir())
    assert len(files) == len(pods) == 5
    assert ms[0].document()["pod_id"] == "c1.pod00000"
    names = [e[1] for e in rec.events]
    assert names == ["manifest_build_start", "manifest_build_done"] * 5
    with pytest.raises(ValueError):
        build_manifests(pods, mode="cloud")


def test_submit_batch_single_call_and_empty():
    be = SimCaasBackend(parse_scenario(CLOUD), "c1")
    be.provision(ResourceRequest(4, NodeCapacity(16, 2, 65536)))
    pods = partition(tasks(100), NodeCapacity(16, 2, 65536), PartitionMode.SCPP)
    ack = submit_batch(be, build_manifests(pods))
    assert be.submit_calls == 1 and ack.count == 100
    rec = Recorder()
    empty = submit_batch(be, [], rec, "c1")
    assert be.submit_calls == 1 and empty.count == 0
    assert [e[1] for e in rec.events] == ["batch_submit_start", "batch_submit_ack"]
    assert empty.t == rec.events[-1][2]


def test_manager_all_done_and_single_batch():
    mgr, recs, trace = drive_manager(registry_doc(caas("c1")), "c1", tasks(40),
                                     ManagerOptions(mode=MCPP))
    assert {r.state for r in recs.values()} == {TaskState.DONE}
    assert mgr.backend.submit_calls == 1
    assert len(mgr.pods) == 3
    assert not replay_capacity(mgr.backend.events, [(16, 2, 65536)] * 4, CAAS_LABELS)
    names = [e.name for e in trace.virtual.events("c1")]
    assert names == ["resource_request", "resource_ready", "teardown_start", "teardown_done"]
    for r in recs.values():
        assert [e.name for e in r.events] == ["partition_done", "batch_submit_ack", "task_start",
                                              "task_done"]
        assert r.result.trace_blob is None


def test_nonzero_exit_fails_only_that_task():
    doc = faulty(exit_codes={"t3": 7})
    _, recs, _ = drive_manager(doc, "c1", tasks(6))
    assert recs["t3"].state is TaskState.FAILED and recs["t3"].result.exit_code == 7
    assert all(recs[f"t{i}"].state is TaskState.DONE for i in (0, 1, 2, 4, 5))


def test_fetch_traces_populates_blob():
    ts = [TaskDescription("a", image="i", expected_duration_s=1.0, fetch_traces=True),
          TaskDescription("b", image="i", expected_duration_s=1.0)]
    _, recs, _ = drive_manager(registry_doc(caas("c1")), "c1", ts)
    blob = json.loads(recs["a"].result.trace_blob)
    assert {e["kind"] for e in blob} >= {"CONTAINER_STARTED", "CONTAINER_EXITED"}
    assert recs["b"].result.trace_blob is None


def test_submit_rejected_fails_all_with_reason():
    mgr, recs, trace = drive_manager(faulty(submit_rejected=True), "c1", tasks(5))
    assert {r.state for r in recs.values()} == {TaskState.FAILED}
    assert all("submit rejected" in r.result.reason for r in recs.values())
    assert mgr.backend.submit_calls == 1
    # the cluster was provisioned, so it is released
    assert [e.name for e in trace.virtual.events("c1")][-1] == "teardown_done"


def test_provider_lost_fails_in_flight():
    _, recs, _ = drive_manager(faulty(provider_lost_at_s=8.0), "c1", tasks(200, expected_duration_s=5.0))
    states = {r.state for r in recs.values()}
    assert TaskState.FAILED in states
    lost = [r for r in recs.values() if r.state is TaskState.FAILED]
    assert all(r.result.reason == "provider lost" for r in lost)


def test_task_too_large_fails_before_submit():
    ts = tasks(2) + [TaskDescription("big", image="i", cpus=64)]
    mgr, recs, _ = drive_manager(registry_doc(caas("c1")), "c1", ts)
    assert recs["big"].state is TaskState.FAILED and "cpus" in recs["big"].result.reason
    assert recs["t0"].state is TaskState.DONE


def test_capacity_exceeded_at_provision():
    _, recs, trace = drive_manager(registry_doc(caas("c1", nodes=9)), "c1", tasks(3))
    assert {r.state for r in recs.values()} == {TaskState.FAILED}
    assert all("provisioning" in r.result.reason for r in recs.values())
    assert [e.t for e in trace.virtual.events("c1")] == [0.0, 0.0, 0.0]


def test_scpp_builds_at_least_as_many_manifests_as_mcpp():
    counts = {}
    for mode in PartitionMode:
        _, _, trace = drive_manager(registry_doc(caas("c1")), "c1", tasks(64), ManagerOptions(mode=mode))
        counts[mode] = sum(e.name == "manifest_build_start" for e in trace.wall)
    assert counts[PartitionMode.SCPP] == 64 > counts[MCPP] == 4
