"""CAAS manager: pack tasks into pods, build manifests, submit one batch, monitor."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import VIRTUAL, WALL, TaskKind, TaskState
from .errors import HydraError, InvalidWorkload, SubmitRejected, TaskTooLarge
from .kernels import first_fit_pack
from .managers import ManagerOptions, PartitionMode, ServiceManager, register_manager
from .resources import BatchAck, NodeCapacity, ResourceRequest

_DIMENSIONS = ("cpus", "gpus", "memory_mb")


@dataclass(frozen=True)
class Container:
    task_id: str
    image: str
    command: tuple
    cpus: int
    gpus: int
    memory_mb: int


@dataclass(frozen=True)
class PodSpec:
    pod_id: str
    containers: tuple

    @property
    def totals(self) -> tuple:
        return (sum(c.cpus for c in self.containers),
                sum(c.gpus for c in self.containers),
                sum(c.memory_mb for c in self.containers))

    @property
    def task_ids(self) -> list:
        return [c.task_id for c in self.containers]


@dataclass(frozen=True)
class Manifest:
    pod_id: str
    body: Optional[bytes] = None
    path: Optional[str] = None

    def document(self) -> dict:
        data = self.body if self.body is not None else Path(self.path).read_bytes()
        return json.loads(data)


def check_fits(task, capacity: NodeCapacity):
    for dim, want, have in zip(_DIMENSIONS, task.demand, capacity.as_tuple()):
        if want > have:
            raise TaskTooLarge(task.id, dim, want, have)


def _container(task) -> Container:
    return Container(task.id, task.image, tuple(task.command), task.cpus, task.gpus,
                     task.memory_mb)


def partition(tasks, capacity: NodeCapacity, mode=PartitionMode.SCPP,
              max_containers_per_pod: Optional[int] = None, prefix: str = "pod") -> list:
    """Group tasks into pods no larger than one node.

    SCPP gives one pod per task in task order. MCPP is first-fit in task
    order over all three dimensions: each task goes to the first open pod
    with room, otherwise it opens a new pod.
    """
    mode = PartitionMode(mode)
    tasks = list(tasks)
    for t in tasks:
        check_fits(t, capacity)
    if not tasks:
        return []
    if mode is PartitionMode.SCPP:
        return [PodSpec(f"{prefix}{i:05d}", (_container(t),)) for i, t in enumerate(tasks)]
    demand = np.array([t.demand for t in tasks], dtype=np.int64)
    assign = first_fit_pack(demand, capacity.as_tuple(), max_containers_per_pod or 0)
    groups: list = [[] for _ in range(int(assign.max()) + 1)]
    for t, p in zip(tasks, assign.tolist()):
        groups[p].append(_container(t))
    return [PodSpec(f"{prefix}{i:05d}", tuple(g)) for i, g in enumerate(groups)]


def manifest_document(pod: PodSpec) -> dict:
    return {
        "pod_id": pod.pod_id,
        "containers": [
            {
                "name": c.task_id,
                "image": c.image,
                "command": list(c.command),
                "resources": {"cpu": c.cpus, "gpu": c.gpus, "memory_mb": c.memory_mb},
            }
            for c in pod.containers
        ],
    }


def manifest_bytes(pod: PodSpec) -> bytes:
    return json.dumps(manifest_document(pod), sort_keys=True, separators=(",", ":")).encode()


def build_manifests(pods, sink=None, mode: str = "memory", run_dir=None,
                    provider: str = "provider") -> list:
    """One manifest per pod. ``disk`` mode writes ``<run_dir>/manifests/<provider>/<pod_id>.json``."""
    if mode not in ("memory", "disk"):
        raise ValueError(f"manifest mode must be 'memory' or 'disk', got {mode!r}")
    out = []
    directory = None
    if mode == "disk" and pods:
        if run_dir is None:
            raise ValueError("disk manifests need a run directory")
        directory = Path(run_dir) / "manifests" / provider
        directory.mkdir(parents=True, exist_ok=True)
    for pod in pods:
        if sink is not None:
            sink.event(pod.pod_id, "manifest_build_start", sink.now(), WALL)
        body = manifest_bytes(pod)
        if directory is not None:
            path = directory / f"{pod.pod_id}.json"
            path.write_bytes(body)
            out.append(Manifest(pod.pod_id, None, str(path)))
        else:
            out.append(Manifest(pod.pod_id, body))
        if sink is not None:
            sink.event(pod.pod_id, "manifest_build_done", sink.now(), WALL)
    return out


def submit_batch(backend, manifests, sink=None, provider: str = "provider", durations=None,
                 release_t=None, after=None) -> BatchAck:
    """One provider interaction for the whole sub-workload."""
    if sink is not None:
        sink.event(provider, "batch_submit_start", sink.now(), WALL)
    if not manifests:
        ack = BatchAck(provider, 0, backend.now)
    else:
        ack = backend.submit(manifests, durations, release_t, after)
    if sink is not None:
        t = sink.now()
        sink.event(provider, "batch_submit_ack", t, WALL)
        ack = replace(ack, t=t)
    return ack


class CaasManager(ServiceManager):
    kind = "CAAS"

    def __init__(self, cfg, backend, sink, options: Optional[ManagerOptions] = None):
        super().__init__(cfg, backend, sink, options)
        lim = cfg.limits
        self.capacity = NodeCapacity(lim.vcpus_per_node, lim.gpus_per_node, lim.memory_mb_per_node)
        self.pods: list = []
        self.ack: Optional[BatchAck] = None

    def execute(self, tasks: list):
        sink, name, opts = self.sink, self.name, self.options
        for t in tasks:
            if t.kind is not TaskKind.CONTAINER:
                raise InvalidWorkload(f"{t.id}: CAAS providers only run container tasks")
        all_ids = {t.id for t in tasks}
        self.requested = True
        sink.event(name, "resource_request", 0.0, VIRTUAL)
        try:
            t_ready = self.backend.provision(ResourceRequest(self.cfg.limits.max_nodes, self.capacity))
        except HydraError as exc:
            self._fail(self._live(tasks), f"provisioning: {exc}", sink.now())
            sink.flush()
            return
        self.ready = True
        sink.event(name, "resource_ready", t_ready, VIRTUAL)
        tasks, release_t = self._stage(self._live(tasks), t_ready)

        sink.event(name, "partition_start", sink.now(), WALL)
        tasks = self._live(tasks)
        fit = []
        for t in tasks:
            try:
                check_fits(t, self.capacity)
                fit.append(t)
            except TaskTooLarge as exc:
                self._fail([t], str(exc), sink.now())
        fit = self._cut_orphans(fit, all_ids)
        # dependency chains are packed one task per pod
        mode = opts.mode
        if any(t.after for t in fit):
            mode = PartitionMode.SCPP
        pods = partition(fit, self.capacity, mode, opts.max_containers_per_pod, f"{name}.pod")
        self.pods = pods
        t = sink.now()
        sink.transition_many([x.id for x in fit], TaskState.SCHEDULED, t, WALL)
        sink.event(name, "partition_done", t, WALL)

        manifests = build_manifests(pods, sink, opts.manifest_mode, opts.run_dir, name)
        pod_of = {c: p.pod_id for p in pods for c in p.task_ids}
        after = {pod_of[t.id]: pod_of[t.after] for t in fit if t.after and t.after in pod_of}
        durations = {t.id: t.expected_duration_s or 0.0 for t in fit}
        try:
            self.ack = submit_batch(self.backend, manifests, sink, name, durations, release_t, after)
        except SubmitRejected as exc:
            self._fail(fit, f"submit rejected: {exc}", sink.now())
            sink.flush()
            return
        sink.transition_many([x.id for x in fit], TaskState.SUBMITTED, self.ack.t, WALL)
        sink.flush()
        self._monitor(fit)


def monitor_until_final(manager: ServiceManager, tasks):
    manager._monitor(tasks)


register_manager("CAAS", CaasManager)
