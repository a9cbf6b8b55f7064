"""Simulated provider backends: a pod-orchestration CAAS service and a pilot
batch connector. Both run the shared discrete-event engine on a virtual clock
whose origin (t=0) is the provider's resource request.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from ..core import TaskState
from ..errors import (
    AllocationTimeout,
    CapacityExceeded,
    ConnectorUnavailable,
    HydraError,
    QueueRejected,
    SubmitRejected,
    TeardownFailure,
)
from ..resources import BatchAck, PilotRequest, ResourceRequest
from .engine import CAAS_LABELS, HPC_LABELS, DesEngine, SimJob, SimUnit, Timing
from .scenario import SimScenario, load_scenario


@dataclass(frozen=True)
class StatusUpdate:
    task_id: str
    state: TaskState
    t: float
    exit_code: Optional[int] = None
    reason: Optional[str] = None


class _SimBackend:
    labels = CAAS_LABELS
    teardown_param = "cluster_teardown_s"

    def __init__(self, scenario: SimScenario, name: str = "sim"):
        self.scenario = scenario
        self.name = name
        self.rng = scenario.rng(name)
        self.engine: Optional[DesEngine] = None
        self.submit_calls = 0
        self.t_ready: Optional[float] = None
        self.torn_down = False
        self._cursor = 0

    # virtual time of the most recent processed instant
    @property
    def now(self) -> float:
        return self.engine.now if self.engine else 0.0

    @property
    def finished(self) -> bool:
        return self.engine is None or self.engine.drained

    @property
    def events(self) -> list:
        return self.engine.events if self.engine else []

    def _units(self, items) -> tuple:
        """items: (task_id, duration) pairs -> SimUnits with seeded durations/exits."""
        faults = self.scenario.faults
        units = []
        for tid, dur in items:
            dur = self.scenario.jittered(self.rng, "duration", float(dur or 0.0))
            roll = self.rng.random()
            code = faults.exit_codes.get(tid)
            if code is None:
                code = 1 if roll < faults.failure_rate else 0
            units.append(SimUnit(tid, dur, int(code)))
        return tuple(units)

    def _translate(self, events) -> list:
        lab = self.labels
        out = []
        for ev in events:
            k = ev.kind
            if k == lab.start:
                out.append(StatusUpdate(ev.unit, TaskState.RUNNING, ev.t))
            elif k == lab.exit:
                if ev.exit_code == 0:
                    out.append(StatusUpdate(ev.unit, TaskState.DONE, ev.t, 0))
                else:
                    out.append(StatusUpdate(ev.unit, TaskState.FAILED, ev.t, ev.exit_code,
                                            f"exit code {ev.exit_code}"))
            elif k == lab.cancel:
                out.append(StatusUpdate(ev.unit, TaskState.CANCELED, ev.t, None, ev.reason))
            elif k == lab.abort:
                out.append(StatusUpdate(ev.unit, TaskState.FAILED, ev.t, None, ev.reason))
            elif k == lab.unschedulable:
                for u in ev.units:
                    out.append(StatusUpdate(u, TaskState.FAILED, ev.t, None, "unschedulable"))
        return out

    def _take(self) -> list:
        evs = self.engine.events[self._cursor:]
        self._cursor = len(self.engine.events)
        return self._translate(evs)

    def poll(self, instants: int = 1) -> list:
        """Advance the simulation by up to ``instants`` event instants."""
        if self.engine is None:
            return []
        for _ in range(instants):
            nxt = self.engine.next_time()
            self.engine.advance(nxt)
            if nxt is None:
                break
        return self._take()

    def run(self) -> list:
        if self.engine is None:
            return []
        self.engine.advance(None)
        return self._take()

    def cancel(self, task_ids: Iterable[str]) -> list:
        if self.engine is None:
            return []
        self.engine.cancel(task_ids)
        return self._take()

    def fetch_trace(self, task_id: str) -> bytes:
        evs = [e.as_dict() for e in self.events if e.unit == task_id]
        return json.dumps(evs, sort_keys=True).encode("utf-8")

    def _teardown_cost(self) -> float:
        base = getattr(self._params(), self.teardown_param)
        return self.scenario.jittered(self.rng, self.teardown_param, base)

    def teardown(self) -> tuple:
        """Release the resources; returns (t_start, t_done) virtual.

        Whatever is still live is aborted first. Updates produced by that are
        available from ``poll``.
        """
        if self.torn_down:
            raise HydraError(f"{self.name}: resources already released")
        t0 = self.now
        if self.engine is not None and not self.engine.drained:
            self.engine.abort("RESOURCE_RELEASED", "resources released")
        self.torn_down = True
        if self.scenario.faults.teardown_fails:
            raise TeardownFailure({self.name: "simulated teardown failure"})
        return t0, t0 + self._teardown_cost()


class SimCaasBackend(_SimBackend):
    """Container service: one node pool, pods scheduled FIFO first-fit."""

    kind = "CAAS"

    def _params(self):
        return self.scenario.caas

    def provision(self, request: ResourceRequest) -> float:
        """Returns the virtual time at which the cluster is ready."""
        p = self.scenario.caas
        if self.engine is not None:
            raise HydraError(f"{self.name}: cluster already provisioned")
        if request.nodes > p.nodes:
            raise CapacityExceeded(
                f"{self.name}: requested {request.nodes} nodes, scenario allows {p.nodes}")
        for dim, want, have in zip(("vcpus", "gpus", "memory_mb"),
                                   request.node.as_tuple(), p.node.as_tuple()):
            if want > have:
                raise CapacityExceeded(
                    f"{self.name}: requested {want} {dim} per node, scenario nodes have {have}")
        t_ready = self.scenario.jittered(self.rng, "cluster_provision_s", p.cluster_provision_s)
        timing = Timing(p.pod_schedule_latency_s, p.container_startup_s, p.container_teardown_s)
        self.engine = DesEngine(
            [request.node.as_tuple()] * request.nodes, timing, CAAS_LABELS, t0=t_ready,
            rng=self.scenario.rng(self.name + ":des"), jitter=self.scenario.jitter,
            speed_factor=self.scenario.speed_factor,
            lost_at=self.scenario.faults.provider_lost_at_s, cluster_id=self.name)
        self.t_ready = t_ready
        return t_ready

    def submit(self, manifests: list, durations: Optional[Mapping[str, float]] = None,
               release_t: Optional[float] = None, after: Optional[Mapping[str, str]] = None) -> BatchAck:
        """Single batch submission of pod manifests (documents, or objects with
        ``body`` bytes or a ``path`` to a written manifest).

        ``durations`` maps container name to its run time; ``after`` maps a pod
        id to the pod it must wait for.
        """
        if self.engine is None:
            raise HydraError(f"{self.name}: submit before provisioning")
        self.submit_calls += 1
        if self.scenario.faults.submit_rejected:
            raise SubmitRejected(f"{self.name}: batch rejected by the service")
        durations = durations or {}
        after = after or {}
        release = max(self.engine.now, release_t or 0.0)
        jobs = []
        count = 0
        for m in manifests:
            m = _load_manifest(m)
            cs = m["containers"]
            demand = (sum(c["resources"]["cpu"] for c in cs),
                      sum(c["resources"]["gpu"] for c in cs),
                      sum(c["resources"]["memory_mb"] for c in cs))
            units = self._units((c["name"], durations.get(c["name"], 0.0)) for c in cs)
            jobs.append(SimJob(m["pod_id"], demand, units, release, after.get(m["pod_id"])))
            count += len(cs)
        self.engine.submit(jobs)
        return BatchAck(self.name, count, self.engine.now)


class SimHpcConnector(_SimBackend):
    """Pilot-style batch connector: queue wait, bootstrap, then bulk tasks."""

    kind = "HPC"
    labels = HPC_LABELS
    teardown_param = "pilot_teardown_s"

    def __init__(self, scenario: SimScenario, name: str = "sim"):
        super().__init__(scenario, name)
        self.pilot_calls = 0
        self.pilot: Optional[PilotRequest] = None

    def _params(self):
        return self.scenario.hpc

    def validate(self):
        if self.scenario.faults.connector_down:
            raise ConnectorUnavailable(f"{self.name}: connector unreachable")

    def submit_pilot(self, pilot: PilotRequest) -> float:
        """Returns the virtual time at which the pilot becomes active."""
        self.validate()
        self.pilot_calls += 1
        p = self.scenario.hpc
        f = self.scenario.faults
        if f.queue_rejected:
            raise QueueRejected(f"{self.name}: queue {pilot.queue!r} rejected the pilot")
        if pilot.nodes > p.nodes:
            raise CapacityExceeded(f"{self.name}: pilot wants {pilot.nodes} nodes, machine has {p.nodes}")
        if pilot.cores_per_node > p.cores_per_node or pilot.gpus_per_node > p.gpus_per_node:
            raise CapacityExceeded(f"{self.name}: pilot node shape exceeds the machine's nodes")
        wait = self.scenario.jittered(self.rng, "queue_wait_s", p.queue_wait_s)
        if f.allocation_timeout_s is not None and wait > f.allocation_timeout_s:
            raise AllocationTimeout(
                f"{self.name}: queue wait {wait:.1f}s exceeds {f.allocation_timeout_s}s")
        t_active = wait + self.scenario.jittered(self.rng, "pilot_bootstrap_s", p.pilot_bootstrap_s)
        timing = Timing(0.0, p.task_launch_s, 0.0, ("", "task_launch_s", ""))
        node = (pilot.cores_per_node, pilot.gpus_per_node, p.memory_mb_per_node)
        self.engine = DesEngine(
            [node] * pilot.nodes, timing, HPC_LABELS, t0=t_active,
            rng=self.scenario.rng(self.name + ":des"), jitter=self.scenario.jitter,
            speed_factor=self.scenario.speed_factor, deadline=t_active + pilot.walltime_s,
            lost_at=f.provider_lost_at_s, cluster_id=self.name)
        self.pilot = pilot
        self.t_ready = t_active
        return t_active

    def submit_tasks(self, tasks: list, release_t: Optional[float] = None) -> BatchAck:
        """Bulk submission. Each entry (a mapping or its JSON text) holds id, cpus,
        gpus, memory_mb, duration_s and optionally after."""
        self.validate()
        if self.engine is None:
            raise HydraError(f"{self.name}: tasks submitted before the pilot")
        self.submit_calls += 1
        release = max(self.engine.now, release_t or 0.0)
        jobs = []
        for t in tasks:
            if isinstance(t, (bytes, str)):
                t = json.loads(t)
            units = self._units([(t["id"], t.get("duration_s", 0.0))])
            jobs.append(SimJob(t["id"], (t["cpus"], t.get("gpus", 0), t.get("memory_mb", 0)),
                               units, release, t.get("after")))
        self.engine.submit(jobs)
        return BatchAck(self.name, len(jobs), self.engine.now)


def _load_manifest(m) -> Mapping:
    if isinstance(m, Mapping):
        return m
    if getattr(m, "body", None) is not None:
        return json.loads(m.body)
    with open(m.path, "rb") as fh:
        return json.loads(fh.read())


def open_backend(cfg, registry=None, seed: Optional[int] = None):
    """Instantiate the simulated backend for a provider configuration."""
    ref = cfg.scenario_ref
    if ref is None:
        raise ConnectorUnavailable(f"{cfg.name}: no connector for endpoint {cfg.endpoint!r}")
    base_dir = registry.base_dir if registry is not None else None
    inline = registry.scenarios if registry is not None else None
    scenario = load_scenario(ref, base_dir, inline)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    cls = SimHpcConnector if str(getattr(cfg.kind, "value", cfg.kind)) == "HPC" else SimCaasBackend
    return cls(scenario, cfg.name)
