from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from packing_oracle import first_fit_oracle
from hydrabroker.caas import PodSpec, partition
from hydrabroker.core import TaskDescription
from hydrabroker.errors import TaskTooLarge
from hydrabroker.managers import PartitionMode
from hydrabroker.resources import NodeCapacity

MCPP, SCPP = PartitionMode.MCPP, PartitionMode.SCPP


def tasks_from(demands):
    return [TaskDescription(f"t{i}", image="img", cpus=c, gpus=g, memory_mb=m)
            for i, (c, g, m) in enumerate(demands)]


def sizes(pods):
    return [[c.cpus for c in p.containers] for p in pods]


def test_uniform_tasks_fill_pods_in_order():
    pods = partition(tasks_from([(1, 0, 1)] * 10), NodeCapacity(4, 0, 1024), MCPP)
    assert [len(p.containers) for p in pods] == [4, 4, 2]
    assert [c.task_id for p in pods for c in p.containers] == [f"t{i}" for i in range(10)]


def test_first_fit_goes_back_to_earlier_pods():
    pods = partition(tasks_from([(c, 0, 1) for c in (3, 2, 2, 1, 4)]), NodeCapacity(4, 0, 64), MCPP)
    assert sizes(pods) == [[3, 1], [2, 2], [4]]
    assert first_fit_oracle([(c, 0, 1) for c in (3, 2, 2, 1, 4)], (4, 0, 64)) == [[0, 3], [1, 2], [4]]


def test_scpp_one_pod_per_task_in_order():
    pods = partition(tasks_from([(1, 0, 1)] * 5), NodeCapacity(4, 0, 64), SCPP, prefix="c1.pod")
    assert [p.pod_id for p in pods] == [f"c1.pod{i:05d}" for i in range(5)]
    assert all(len(p.containers) == 1 for p in pods)


def test_too_large_names_dimension():
    with pytest.raises(TaskTooLarge) as exc:
        partition(tasks_from([(1, 3, 1)]), NodeCapacity(4, 2, 64), MCPP)
    assert exc.value.dimension == "gpus"
    with pytest.raises(TaskTooLarge):
        partition(tasks_from([(1, 0, 65)]), NodeCapacity(4, 0, 64), SCPP)


def test_gpu_and_memory_constrain_packing():
    pods = partition(tasks_from([(1, 1, 10), (1, 1, 10), (1, 0, 60), (1, 0, 5)]),
                     NodeCapacity(8, 1, 64), MCPP)
    assert [p.task_ids for p in pods] == [["t0", "t3"], ["t1"], ["t2"]]


def test_max_containers_per_pod():
    pods = partition(tasks_from([(1, 0, 1)] * 7), NodeCapacity(16, 0, 64), MCPP,
                     max_containers_per_pod=3)
    assert [len(p.containers) for p in pods] == [3, 3, 1]


def test_empty_input():
    assert partition([], NodeCapacity(4, 0, 64), MCPP) == []


demand_rows = st.lists(st.tuples(st.integers(1, 16), st.integers(0, 4), st.integers(1, 65536)),
                       min_size=1, max_size=300)


@settings(max_examples=200, deadline=None)
@given(demand_rows, st.sampled_from([0, 0, 2, 5]))
def test_mcpp_matches_oracle_and_invariants(demands, per_pod):
    cap = NodeCapacity(16, 4, 65536)
    tasks = tasks_from(demands)
    pods = partition(tasks, cap, MCPP, per_pod or None)
    expect = first_fit_oracle(demands, cap.as_tuple(), per_pod)
    assert [[int(c.task_id[1:]) for c in p.containers] for p in pods] == expect
    assert sorted(c.task_id for p in pods for c in p.containers) == sorted(t.id for t in tasks)
    for p in pods:
        assert all(x <= y for x, y in zip(p.totals, cap.as_tuple()))
        assert p.totals == tuple(map(sum, zip(*[(c.cpus, c.gpus, c.memory_mb) for c in p.containers])))
    assert len(pods) <= len(tasks) == len(partition(tasks, cap, SCPP))


def test_podspec_totals():
    p = PodSpec("p", tuple(partition(tasks_from([(1, 1, 5), (2, 0, 7)]), NodeCapacity(4, 1, 64),
                                     MCPP)[0].containers))
    assert p.totals == (3, 1, 12)
