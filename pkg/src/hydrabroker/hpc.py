"""HPC manager: one pilot allocation plus one bulk task submission per sub-workload."""

from __future__ import annotations

import json
import math
from dataclasses import replace
from typing import Optional

from .core import VIRTUAL, WALL, TaskState
from .errors import (
    AllocationTimeout,
    CapacityExceeded,
    ConnectorUnavailable,
    EmptyWorkload,
    QueueRejected,
    TaskTooLarge,
)
from .managers import ManagerOptions, ServiceManager, register_manager
from .resources import BatchAck, PilotRequest

DEFAULT_WALLTIME_S = 86400


def _check_node(task, limits):
    shape = (("cpus", task.cpus, limits.vcpus_per_node),
             ("gpus", task.gpus, limits.gpus_per_node),
             ("memory_mb", task.memory_mb, limits.memory_mb_per_node))
    for dim, want, have in shape:
        if want > have:
            raise TaskTooLarge(task.id, dim, want, have)


def build_pilot_request(tasks, limits, concurrency_cap: Optional[int] = None) -> PilotRequest:
    """Size the pilot for the peak concurrent core demand, in whole nodes.

    The peak is the total requested cores, capped by ``concurrency_cap`` (or
    the limits' cap). Nodes are clamped to the provider's ``max_nodes``.
    """
    tasks = list(tasks)
    if not tasks:
        raise EmptyWorkload("a pilot needs at least one task")
    for t in tasks:
        _check_node(t, limits)
    cap = concurrency_cap if concurrency_cap is not None else limits.concurrency_cap
    peak = sum(t.cpus for t in tasks)
    if cap is not None:
        peak = min(peak, cap)
    nodes = max(1, math.ceil(peak / limits.vcpus_per_node))
    nodes = min(nodes, limits.max_nodes)
    return PilotRequest(nodes, limits.vcpus_per_node, limits.gpus_per_node,
                        limits.walltime_s or DEFAULT_WALLTIME_S, limits.queue)


def describe_task(task) -> bytes:
    """The connector-side task description. Executables run directly on the
    pilot's cores; container tasks carry their image reference."""
    doc = {
        "id": task.id,
        "kind": task.kind.value,
        "executable": task.executable or "",
        "arguments": list(task.arguments or task.command),
        "image": task.image or "",
        "cpus": task.cpus,
        "gpus": task.gpus,
        "memory_mb": task.memory_mb,
        "duration_s": task.expected_duration_s or 0.0,
    }
    if task.after:
        doc["after"] = task.after
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def bulk_submit(connector, tasks, sink=None, provider: str = "provider",
                release_t: Optional[float] = None) -> BatchAck:
    """Translate and submit every task in a single connector call."""
    descriptions = [describe_task(t) for t in tasks]
    if sink is not None:
        sink.event(provider, "batch_submit_start", sink.now(), WALL)
    ack = connector.submit_tasks(descriptions, release_t) if descriptions else BatchAck(provider, 0)
    if sink is not None:
        t = sink.now()
        sink.event(provider, "batch_submit_ack", t, WALL)
        ack = replace(ack, t=t)
    return ack


class HpcManager(ServiceManager):
    kind = "HPC"

    def __init__(self, cfg, backend, sink, options: Optional[ManagerOptions] = None):
        super().__init__(cfg, backend, sink, options)
        self.pilot: Optional[PilotRequest] = None
        self.ack: Optional[BatchAck] = None

    def execute(self, tasks: list):
        sink, name, conn = self.sink, self.name, self.backend
        all_ids = {t.id for t in tasks}
        self.requested = True
        sink.event(name, "resource_request", 0.0, VIRTUAL)
        try:
            conn.validate()
        except ConnectorUnavailable as exc:
            self._fail(self._live(tasks), f"connector: {exc}", sink.now())
            sink.flush()
            return
        fit = []
        for t in self._live(tasks):
            try:
                _check_node(t, self.cfg.limits)
                fit.append(t)
            except TaskTooLarge as exc:
                self._fail([t], str(exc), sink.now())
        if not fit:
            sink.flush()
            return
        self.pilot = build_pilot_request(fit, self.cfg.limits)
        try:
            t_active = conn.submit_pilot(self.pilot)
        except (QueueRejected, AllocationTimeout, CapacityExceeded, ConnectorUnavailable) as exc:
            self._fail(self._live(fit), f"pilot: {exc}", sink.now())
            sink.flush()
            return
        self.ready = True
        sink.event(name, "resource_ready", t_active, VIRTUAL)
        fit, release_t = self._stage(self._live(fit), t_active)

        sink.event(name, "partition_start", sink.now(), WALL)
        fit = self._cut_orphans(self._live(fit), all_ids)
        t = sink.now()
        sink.transition_many([x.id for x in fit], TaskState.SCHEDULED, t, WALL)
        sink.event(name, "partition_done", t, WALL)
        try:
            self.ack = bulk_submit(conn, fit, sink, name, release_t)
        except ConnectorUnavailable as exc:
            self._fail(fit, f"connector: {exc}", sink.now())
            sink.flush()
            return
        sink.transition_many([x.id for x in fit], TaskState.SUBMITTED, self.ack.t, WALL)
        sink.flush()
        self._monitor(fit)


register_manager("HPC", HpcManager)
