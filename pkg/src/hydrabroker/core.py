"""Domain types, the task lifecycle state machine, traces and clocks."""

from __future__ import annotations

import enum
import itertools
import posixpath
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Optional

from .errors import (
    ClockDomainMismatch,
    IllegalTransition,
    InvalidTask,
    StaleTimestamp,
    UnknownEventName,
)


class ClockDomain(str, enum.Enum):
    WALL = "WALL"
    VIRTUAL = "VIRTUAL"


WALL = ClockDomain.WALL
VIRTUAL = ClockDomain.VIRTUAL

EVENT_NAMES = (
    "workload_accepted",
    "partition_start",
    "partition_done",
    "manifest_build_start",
    "manifest_build_done",
    "batch_submit_start",
    "batch_submit_ack",
    "resource_request",
    "resource_ready",
    "task_start",
    "task_done",
    "task_failed",
    "task_canceled",
    "teardown_start",
    "teardown_done",
    # staging and cancel bookkeeping
    "stage_in_start",
    "stage_in_done",
    "cancel_ignored",
)
VOCABULARY = frozenset(EVENT_NAMES)
_EVENT_RANK = {name: i for i, name in enumerate(EVENT_NAMES)}


class TaskKind(str, enum.Enum):
    EXECUTABLE = "EXECUTABLE"
    CONTAINER = "CONTAINER"


class TaskState(str, enum.Enum):
    PENDING = "PENDING"
    SCHEDULED = "SCHEDULED"
    SUBMITTED = "SUBMITTED"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"
    CANCELED = "CANCELED"

    @property
    def terminal(self) -> bool:
        return self in TERMINAL_STATES


TERMINAL_STATES = frozenset({TaskState.DONE, TaskState.FAILED, TaskState.CANCELED})

_FORWARD = {
    TaskState.PENDING: {TaskState.SCHEDULED},
    TaskState.SCHEDULED: {TaskState.SUBMITTED},
    TaskState.SUBMITTED: {TaskState.RUNNING},
    TaskState.RUNNING: {TaskState.DONE},
}

# SCHEDULED means "assigned to a pod or batch" and SUBMITTED "acknowledged by
# the provider", so they reuse the partition and submission event names.
STATE_EVENT = {
    TaskState.SCHEDULED: "partition_done",
    TaskState.SUBMITTED: "batch_submit_ack",
    TaskState.RUNNING: "task_start",
    TaskState.DONE: "task_done",
    TaskState.FAILED: "task_failed",
    TaskState.CANCELED: "task_canceled",
}
EVENT_STATE = {v: k for k, v in STATE_EVENT.items()}
TERMINAL_EVENTS = frozenset({"task_done", "task_failed", "task_canceled"})


def is_legal(src: TaskState, dst: TaskState) -> bool:
    if src in TERMINAL_STATES:
        return False
    if dst in (TaskState.CANCELED, TaskState.FAILED):
        return True
    return dst in _FORWARD[src]


class Endpoint:
    LOCAL = "LOCAL"


@dataclass(frozen=True)
class DataRef:
    """A file on an endpoint: ``LOCAL`` or a provider's sandbox."""

    endpoint: str
    path: str
    size_bytes: Optional[int] = None

    def __post_init__(self):
        if not self.endpoint:
            raise ValueError("endpoint must be nonempty")
        if not self.path:
            raise ValueError("path must be nonempty")
        norm = posixpath.normpath(self.path.lstrip("/"))
        if norm == ".." or norm.startswith("../"):
            raise ValueError(f"path escapes the endpoint root: {self.path!r}")
        object.__setattr__(self, "path", norm)

    @classmethod
    def parse(cls, text: str) -> "DataRef":
        """``"local:data/x.nc"`` or ``"<provider>:path"``; bare paths are local."""
        endpoint, sep, path = text.partition(":")
        if not sep:
            return cls(Endpoint.LOCAL, text)
        if endpoint.lower() == "local":
            endpoint = Endpoint.LOCAL
        return cls(endpoint, path)

    def __str__(self):
        ep = "local" if self.endpoint == Endpoint.LOCAL else self.endpoint
        return f"{ep}:{self.path}"


@dataclass(frozen=True)
class TaskDescription:
    id: str
    kind: TaskKind = TaskKind.CONTAINER
    image: Optional[str] = None
    command: tuple = ()
    executable: Optional[str] = None
    arguments: tuple = ()
    cpus: int = 1
    gpus: int = 0
    memory_mb: int = 1024
    provider: Optional[str] = None
    inputs: tuple = ()
    fetch_traces: bool = False
    expected_duration_s: Optional[float] = None
    # id of a task that must finish DONE first (used by linear workflows)
    after: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise InvalidTask("task id must be nonempty")
        kind = TaskKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "command", tuple(self.command))
        object.__setattr__(self, "arguments", tuple(self.arguments))
        object.__setattr__(
            self,
            "inputs",
            tuple(DataRef.parse(i) if isinstance(i, str) else i for i in self.inputs),
        )
        if self.cpus < 1:
            raise InvalidTask(f"{self.id}: cpus must be >= 1")
        if self.gpus < 0:
            raise InvalidTask(f"{self.id}: gpus must be >= 0")
        if self.memory_mb < 1:
            raise InvalidTask(f"{self.id}: memory_mb must be >= 1")
        if kind is TaskKind.CONTAINER and not self.image:
            raise InvalidTask(f"{self.id}: container task needs an image reference")
        if kind is TaskKind.EXECUTABLE and not self.executable:
            raise InvalidTask(f"{self.id}: executable task needs an executable path")
        if self.expected_duration_s is not None and self.expected_duration_s < 0:
            raise InvalidTask(f"{self.id}: expected_duration_s must be >= 0")

    @property
    def demand(self) -> tuple:
        return (self.cpus, self.gpus, self.memory_mb)


@dataclass(frozen=True)
class TaskResult:
    exit_code: Optional[int]
    output_ref: Optional[DataRef] = None
    trace_blob: Optional[bytes] = None
    reason: Optional[str] = None


class TraceEvent(NamedTuple):
    entity_id: str
    name: str
    t: float
    clock: ClockDomain


def event_sort_key(ev: TraceEvent):
    return (0 if ev.clock is WALL else 1, ev.t, ev.entity_id, _EVENT_RANK.get(ev.name, 99))


class TaskRecord:
    """A task description plus its lifecycle state, history and result.

    Transitions are serialized by ``lock``. The history may hold events from
    both clock domains (broker-side steps are wall-clock, provider-side steps
    virtual); timestamps are non-decreasing within each domain.
    """

    __slots__ = ("description", "state", "events", "result", "lock", "_last_t")

    def __init__(self, description: TaskDescription):
        self.description = description
        self.state = TaskState.PENDING
        self.events: list[TraceEvent] = []
        self.result: Optional[TaskResult] = None
        self.lock = threading.RLock()
        self._last_t: dict = {}

    @property
    def id(self) -> str:
        return self.description.id

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    def _check_time(self, t: float, clock: ClockDomain):
        last = self._last_t.get(clock)
        if last is not None and t < last:
            raise StaleTimestamp(f"{self.id}: t={t} precedes last {clock.value} event at {last}")

    def append_event(self, name: str, t: float, clock: ClockDomain = WALL) -> TraceEvent:
        if name not in VOCABULARY:
            raise UnknownEventName(name)
        with self.lock:
            self._check_time(t, clock)
            ev = TraceEvent(self.id, name, t, clock)
            self.events.append(ev)
            self._last_t[clock] = t
            return ev

    def transition(self, target: TaskState, t: float, clock: ClockDomain = WALL,
                   result: Optional[TaskResult] = None) -> TraceEvent:
        target = TaskState(target)
        with self.lock:
            if not is_legal(self.state, target):
                raise IllegalTransition(self.id, self.state, target)
            self._check_time(t, clock)
            if result is not None:
                if target not in TERMINAL_STATES:
                    raise ValueError("a result is only attached in a terminal state")
                if result.trace_blob is not None and not self.description.fetch_traces:
                    result = TaskResult(result.exit_code, result.output_ref, None, result.reason)
            ev = TraceEvent(self.id, STATE_EVENT[target], t, clock)
            self.events.append(ev)
            self._last_t[clock] = t
            self.state = target
            if result is not None:
                self.result = result
            return ev

    def __repr__(self):
        return f"TaskRecord({self.id!r}, {self.state.value})"


def transition(record: TaskRecord, target: TaskState, t: float,
               clock: ClockDomain = WALL, result: Optional[TaskResult] = None) -> TaskRecord:
    record.transition(target, t, clock, result)
    return record


def replay(events: Iterable[TraceEvent]) -> TaskState:
    """Re-run a task history through the state machine; returns the final state."""
    state = TaskState.PENDING
    for ev in events:
        target = EVENT_STATE.get(ev.name)
        if target is None:
            continue
        if not is_legal(state, target):
            raise IllegalTransition(ev.entity_id, state, target)
        state = target
    return state


class Trace:
    """An append-only event stream bound to one clock domain."""

    def __init__(self, clock: ClockDomain):
        self.clock = ClockDomain(clock)
        self._events: list[TraceEvent] = []
        self._last: dict[str, float] = {}
        self._lock = threading.Lock()

    def append(self, entity_id: str, name: str, t: float) -> TraceEvent:
        if name not in VOCABULARY:
            raise UnknownEventName(name)
        with self._lock:
            last = self._last.get(entity_id)
            if last is not None and t < last:
                raise StaleTimestamp(f"{entity_id}: t={t} precedes last event at {last}")
            ev = TraceEvent(entity_id, name, float(t), self.clock)
            self._events.append(ev)
            self._last[entity_id] = ev.t
            return ev

    def add(self, event: TraceEvent) -> TraceEvent:
        if event.clock != self.clock:
            raise ClockDomainMismatch(
                f"{event.clock.value} event {event.name!r} on a {self.clock.value} trace"
            )
        return self.append(event.entity_id, event.name, event.t)

    def extend(self, events: Iterable[TraceEvent]):
        for ev in events:
            self.add(ev)

    def events(self, entity_id: Optional[str] = None) -> list[TraceEvent]:
        with self._lock:
            if entity_id is None:
                return list(self._events)
            return [e for e in self._events if e.entity_id == entity_id]

    def __len__(self):
        return len(self._events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events())


class RunTrace:
    """The wall-clock (broker) and virtual (provider) traces of one run."""

    def __init__(self):
        self.wall = Trace(WALL)
        self.virtual = Trace(VIRTUAL)

    def of(self, clock: ClockDomain) -> Trace:
        return self.wall if clock is WALL else self.virtual

    def add(self, event: TraceEvent) -> TraceEvent:
        return self.of(event.clock).add(event)

    def __iter__(self):
        return itertools.chain(self.wall.events(), self.virtual.events())

    def __len__(self):
        return len(self.wall) + len(self.virtual)

    def sorted_events(self) -> list[TraceEvent]:
        return sorted(self, key=event_sort_key)


def append_event(target, name: str, t: float, clock: Optional[ClockDomain] = None,
                 entity_id: Optional[str] = None) -> TraceEvent:
    """Append to a TaskRecord, a Trace or a RunTrace.

    For traces ``entity_id`` names the entity; ``clock`` must match the trace.
    """
    if isinstance(target, TaskRecord):
        return target.append_event(name, t, clock or WALL)
    if isinstance(target, RunTrace):
        if clock is None:
            raise ValueError("clock is required for a RunTrace")
        return target.of(ClockDomain(clock)).append(entity_id, name, t)
    if isinstance(target, Trace):
        if clock is not None and ClockDomain(clock) != target.clock:
            raise ClockDomainMismatch(
                f"{ClockDomain(clock).value} event {name!r} on a {target.clock.value} trace"
            )
        return target.append(entity_id, name, t)
    raise TypeError(f"cannot append events to {type(target).__name__}")


class WallClock:
    """Seconds since ``epoch`` on the monotonic clock (shared across processes)."""

    domain = WALL

    def __init__(self, epoch: Optional[float] = None):
        self.epoch = time.perf_counter() if epoch is None else epoch

    def now(self) -> float:
        return time.perf_counter() - self.epoch

    def fork(self) -> "WallClock":
        return self


class TickClock:
    """Deterministic stand-in for WallClock: every reading advances by ``step``.

    Each manager context gets its own fork, so readings never depend on thread
    interleaving. Durations measured with it count clock reads, not seconds.
    """

    domain = WALL

    def __init__(self, start: float = 0.0, step: float = 1e-6):
        self._n = 0
        self.start = start
        self.step = step
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            self._n += 1
            return self.start + self._n * self.step

    def fork(self) -> "TickClock":
        return TickClock(self.now(), self.step)

    def __getstate__(self):
        return {"_n": self._n, "start": self.start, "step": self.step}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


def make_clock(kind: str = "wall"):
    if kind == "wall":
        return WallClock()
    if kind == "tick":
        return TickClock()
    raise ValueError(f"unknown broker clock {kind!r} (expected 'wall' or 'tick')")
