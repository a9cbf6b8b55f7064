"""Resource shapes exchanged between managers and provider backends."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class NodeCapacity:
    vcpus: int
    gpus: int = 0
    memory_mb: int = 65536

    def __post_init__(self):
        if self.vcpus < 1 or self.memory_mb < 1:
            raise ValueError("node capacity needs positive vcpus and memory_mb")
        if self.gpus < 0:
            raise ValueError("node gpus must be >= 0")

    def as_tuple(self) -> tuple:
        return (self.vcpus, self.gpus, self.memory_mb)


@dataclass(frozen=True)
class ResourceRequest:
    """A VM-cluster style request: ``nodes`` identical nodes."""

    nodes: int
    node: NodeCapacity


@dataclass(frozen=True)
class PilotRequest:
    nodes: int
    cores_per_node: int
    gpus_per_node: int = 0
    walltime_s: int = 86400
    queue: str = "batch"

    def __post_init__(self):
        if self.nodes < 1 or self.cores_per_node < 1 or self.walltime_s < 1:
            raise ValueError("pilot needs nodes, cores_per_node and walltime_s >= 1")

    @property
    def total_cores(self) -> int:
        return self.nodes * self.cores_per_node


@dataclass(frozen=True)
class BatchAck:
    """Acknowledgment of one batch; ``t`` is in the clock of whoever recorded it."""

    provider: str
    count: int
    t: float = 0.0
