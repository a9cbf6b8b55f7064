from __future__ import annotations

import hashlib
import os
import pickle
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CLOUD, caas, hpc, registry_doc
from hydrabroker.broker import Broker, Workload
from hydrabroker.core import DataRef, TaskDescription, TaskState
from hydrabroker.data import DataManager, DataOpKind, data_op
from hydrabroker.errors import AlreadyExists, CrossEndpointLink, NotFound, PermissionDenied
from hydrabroker.providers import load_registry

K = DataOpKind
L = "LOCAL"


@pytest.fixture
def dm(tmp_path):
    (tmp_path / "local").mkdir()
    (tmp_path / "local" / "a.txt").write_bytes(b"hello world")
    return DataManager(str(tmp_path / "local"), str(tmp_path / "sb"), ("p1", "p2"))


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_copy_then_list(dm):
    data_op(dm, K.COPY, DataRef(L, "a.txt"), DataRef(L, "sub/b.txt"))
    listing = dm.data_op(K.LIST, DataRef(L, "sub")).entries
    assert listing == (DataRef(L, "sub/b.txt", 11),)
    top = dm.data_op(K.LIST, DataRef(L, ".")).entries
    assert [e.path for e in top] == ["a.txt", "sub"]


def test_delete_missing(dm):
    with pytest.raises(NotFound):
        dm.data_op(K.DELETE, DataRef(L, "nope"))


def test_move_removes_source_keeps_hash(dm):
    before = sha(dm.resolve(DataRef(L, "a.txt")))
    dm.data_op(K.MOVE, DataRef(L, "a.txt"), DataRef("p1", "in/a.txt"))
    assert not dm.resolve(DataRef(L, "a.txt")).exists()
    assert sha(dm.resolve(DataRef("p1", "in/a.txt"))) == before
    assert [e.path for e in dm.data_op(K.LIST, DataRef("p1", "in")).entries] == ["in/a.txt"]


def test_no_overwrite_by_default(dm):
    dm.data_op(K.COPY, DataRef(L, "a.txt"), DataRef("p1", "a.txt"))
    with pytest.raises(AlreadyExists):
        dm.data_op(K.COPY, DataRef(L, "a.txt"), DataRef("p1", "a.txt"))
    dm.data_op(K.COPY, DataRef(L, "a.txt"), DataRef("p1", "a.txt"), overwrite=True)


def test_link_same_endpoint_only(dm):
    dm.data_op(K.LINK, DataRef(L, "a.txt"), DataRef(L, "alias.txt"))
    assert dm.resolve(DataRef(L, "alias.txt")).read_bytes() == b"hello world"
    assert os.path.islink(dm.resolve(DataRef(L, "alias.txt")))
    with pytest.raises(CrossEndpointLink):
        dm.data_op(K.LINK, DataRef(L, "a.txt"), DataRef("p1", "x"))


def test_escape_attempts(dm, tmp_path):
    with pytest.raises(ValueError):
        DataRef(L, "../outside")
    (tmp_path / "secret.txt").write_text("s")
    os.symlink(tmp_path, dm.resolve(DataRef(L, "door")))
    with pytest.raises(PermissionDenied):
        dm.data_op(K.COPY, DataRef(L, "door/secret.txt"), DataRef("p1", "x"))
    with pytest.raises(ValueError):
        dm.data_op(K.COPY, DataRef(L, "a.txt"))


def test_manager_pickles_without_locks(dm):
    clone = pickle.loads(pickle.dumps(dm))
    assert clone.local_root == dm.local_root and clone.providers == dm.providers


def test_concurrent_copies_to_distinct_paths(dm):
    def work(i):
        dm.data_op(K.COPY, DataRef(L, "a.txt"), DataRef("p2", f"f{i}.txt"))

    threads = [threading.Thread(target=work, args=(i,)) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(dm.data_op(K.LIST, DataRef("p2", ".")).entries) == 16


@settings(max_examples=40, deadline=None)
@given(st.binary(max_size=4096))
def test_copy_preserves_bytes(tmp_path_factory, payload):
    root = tmp_path_factory.mktemp("c")
    (root / "l").mkdir()
    (root / "l" / "x").write_bytes(payload)
    m = DataManager(str(root / "l"), str(root / "s"), ("p",))
    res = m.data_op(K.COPY, DataRef(L, "x"), DataRef("p", "y"))
    assert res.bytes_moved == len(payload)
    assert m.resolve(DataRef("p", "y")).read_bytes() == payload


def test_stage_in_timing_and_noop(dm):
    (dm.resolve(DataRef(L, "b.bin"))).write_bytes(b"x" * 2_000_000)
    t = TaskDescription("t", image="i", inputs=("local:a.txt", "local:b.bin"))
    staged = dm.stage_in(t, "p1", t0=5.0, bandwidth_mb_s=1.0)
    assert [s.dst.path for s in staged] == ["a.txt", "b.bin"]
    assert staged[1].t_done == pytest.approx(5.0 + 11e-6 + 2.0)
    assert dm.stage_in(TaskDescription("n", image="i"), "p1") == []


def _broker_with_data(tmp_path, provider):
    local = tmp_path / "local"
    local.mkdir()
    for n in ("one.dat", "two.dat"):
        (local / n).write_text(n)
    sc = dict(CLOUD, stage_bandwidth_mb_s=0.001)
    reg = load_registry(registry_doc(provider, scenarios={"cloud": sc}))
    data = DataManager(str(local), str(tmp_path / "sb"), tuple(reg.names))
    return Broker(reg, executor="thread", data=data), data


@pytest.mark.parametrize("provider", [caas("c1"), hpc("h1")])
def test_staging_precedes_execution(tmp_path, provider):
    broker, data = _broker_with_data(tmp_path, provider)
    name = provider["name"]
    ok = TaskDescription("ok", image="i", inputs=("local:one.dat", "local:two.dat"),
                         expected_duration_s=1.0)
    bad = TaskDescription("bad", image="i", inputs=("local:missing.dat",))
    plain = TaskDescription("plain", image="i")
    h = broker.submit_workload(Workload([ok, bad, plain]))
    broker.wait(h, 30)
    broker.shutdown(h)
    recs = h.records
    assert recs["ok"].state is TaskState.DONE and recs["plain"].state is TaskState.DONE
    assert recs["bad"].state is TaskState.FAILED and "staging" in recs["bad"].result.reason
    assert "task_start" not in [e.name for e in recs["bad"].events]
    assert sorted(p.name for p in (tmp_path / "sb" / name).iterdir()) == ["one.dat", "two.dat"]
    ev = h.trace.virtual.events("ok")
    staged = [e.t for e in ev if e.name.startswith("stage_in")]
    start = [e.t for e in recs["ok"].events if e.name == "task_start"][0]
    assert len(staged) == 4 and max(staged) <= start
