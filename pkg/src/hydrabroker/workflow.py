"""Linear staged workflows on top of the broker.

Every instance is a chain of stages bound to one provider. All instances are
submitted together as a single dependency-aware workload: stage i+1 carries
``after=<stage i>``, so the provider starts it only once stage i is DONE,
and a failed stage cancels the rest of its chain. Instances never depend on
each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .broker import Broker, FailurePolicy, Workload, WorkloadResult
from .core import TERMINAL_EVENTS, TaskDescription, TaskKind
from .errors import InvalidWorkload, TeardownFailure
from .managers import PartitionMode
from .metrics import compute_metrics, provider_counts


@dataclass(frozen=True)
class StageTemplate:
    name: str
    cpus: int = 1
    memory_mb: int = 2048
    gpus: int = 0
    kind: TaskKind = TaskKind.CONTAINER
    image: Optional[str] = "stage:latest"
    command: tuple = ()
    executable: Optional[str] = None
    arguments: tuple = ()
    # "{instance}" in a path is replaced by the instance index
    inputs: tuple = ()
    expected_duration_s: float = 1.0


@dataclass(frozen=True)
class StagedWorkflow:
    name: str
    stages: tuple
    instance_count: int = 1
    # instance index -> provider; unbound instances are dealt round-robin
    bindings: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise InvalidWorkload(f"workflow {self.name!r} has no stages")
        if self.instance_count < 1:
            raise InvalidWorkload(f"workflow {self.name!r}: instance_count must be >= 1")
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise InvalidWorkload(f"workflow {self.name!r}: stage names must be unique")

    def task_id(self, instance: int, j: int) -> str:
        return f"{self.name}-{instance:04d}-{j}-{self.stages[j].name}"

    def instance_ids(self, instance: int) -> list:
        return [self.task_id(instance, j) for j in range(len(self.stages))]


def bind_round_robin(instance_count: int, providers: Sequence[str]) -> dict:
    return {k: providers[k % len(providers)] for k in range(instance_count)}


def bind_blocks(instance_count: int, providers: Sequence[str]) -> dict:
    """Contiguous, near-equal blocks of instances per provider."""
    n = len(providers)
    out = {}
    for k in range(instance_count):
        out[k] = providers[min(n - 1, k * n // instance_count)]
    return out


def expand(wf: StagedWorkflow, providers: Sequence[str]) -> list:
    """The workflow as an ordered task list (instance-major, stage order)."""
    binding = dict(bind_round_robin(wf.instance_count, list(providers)))
    binding.update(wf.bindings)
    tasks = []
    for k in range(wf.instance_count):
        prev = None
        for j, st in enumerate(wf.stages):
            tid = wf.task_id(k, j)
            inputs = tuple(p.replace("{instance}", str(k)) for p in st.inputs) if j == 0 else ()
            tasks.append(TaskDescription(
                id=tid, kind=st.kind, image=st.image if st.kind is TaskKind.CONTAINER else None,
                command=st.command, executable=st.executable, arguments=st.arguments,
                cpus=st.cpus, gpus=st.gpus, memory_mb=st.memory_mb, provider=binding[k],
                inputs=inputs, expected_duration_s=st.expected_duration_s, after=prev))
            prev = tid
    return tasks


@dataclass
class WorkflowResult:
    workflow: StagedWorkflow
    result: WorkloadResult
    # instance -> final status: DONE when every stage is DONE
    status: dict
    makespans: dict
    ttx_s: float
    metrics: object
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(s == "DONE" for s in self.status.values())


def instance_makespan(trace, ids) -> float:
    """Virtual time from the first stage start to the last stage terminal event."""
    starts, ends = [], []
    wanted = set(ids)
    for e in trace.virtual:
        if e.entity_id not in wanted:
            continue
        if e.name == "task_start":
            starts.append(e.t)
        elif e.name in TERMINAL_EVENTS:
            ends.append(e.t)
    if not starts or not ends:
        return 0.0
    return max(ends) - min(starts)


def ordering_violations(trace, wf: StagedWorkflow) -> list:
    """(instance, stage) pairs where stage i+1 started before stage i finished DONE."""
    first = {}
    for e in trace.virtual:
        first.setdefault((e.entity_id, e.name), e.t)
    bad = []
    for k in range(wf.instance_count):
        ids = wf.instance_ids(k)
        for j in range(len(ids) - 1):
            nxt = first.get((ids[j + 1], "task_start"))
            if nxt is None:
                continue
            done = first.get((ids[j], "task_done"))
            if done is None or done > nxt:
                bad.append((k, j + 1))
    return bad


def run_workflows(broker: Broker, wf: StagedWorkflow, mode=PartitionMode.SCPP,
                  timeout: Optional[float] = None) -> WorkflowResult:
    tasks = expand(wf, broker.registry.names)
    workload = Workload(tasks, partition_mode=mode, on_task_failure=FailurePolicy.CONTINUE,
                        id=wf.name)
    handle = broker.submit_workload(workload)
    failures = {}
    try:
        result = broker.wait(handle, timeout)
    finally:
        try:
            broker.shutdown(handle)
        except TeardownFailure as exc:
            failures = exc.failures
    status = {}
    makespans = {}
    for k in range(wf.instance_count):
        ids = wf.instance_ids(k)
        states = [handle.records[i].state.value for i in ids]
        status[k] = "DONE" if all(s == "DONE" for s in states) else next(
            s for s in states if s != "DONE")
        makespans[k] = instance_makespan(handle.trace, ids)
    report = compute_metrics(handle.trace, provider_counts(handle, broker.registry))
    return WorkflowResult(wf, result, status, makespans, report.aggregate.ttx_s, report,
                          failures)


def stage_templates(raw_stages) -> tuple:
    """Stage templates from run-description mappings."""
    out = []
    for i, raw in enumerate(raw_stages or ()):
        if isinstance(raw, str):
            raw = {"name": raw}
        if not isinstance(raw, Mapping) or "name" not in raw:
            raise InvalidWorkload(f"stage {i}: needs a name")
        kw = dict(raw)
        if "kind" in kw:
            kw["kind"] = TaskKind(str(kw["kind"]).upper())
        for key in ("command", "arguments", "inputs"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            out.append(StageTemplate(**kw))
        except TypeError as exc:
            raise InvalidWorkload(f"stage {i}: {exc}") from None
    return tuple(out)


__all__ = [
    "StageTemplate", "StagedWorkflow", "WorkflowResult", "bind_blocks", "bind_round_robin",
    "expand", "instance_makespan", "ordering_violations", "run_workflows", "stage_templates",
]
