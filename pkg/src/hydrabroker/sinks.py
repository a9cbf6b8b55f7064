"""How managers report back: events, state transitions and cancel requests.

``LocalSink`` writes straight into the broker's shared state (thread
executor). ``RemoteSink`` runs inside a worker process, buffers messages and
ships them over a pipe at phase boundaries; the parent replays them through
a ``LocalSink``.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional

from .core import ClockDomain, RunTrace, TaskState


class BrokerState:
    """Records, trace and per-provider cancel queues of one workload."""

    def __init__(self, records: dict, trace: RunTrace, providers):
        self.records = records
        self.trace = trace
        self.cond = threading.Condition()
        self.open = sum(1 for r in records.values() if not r.terminal)
        self.cancel_queues = {p: set() for p in providers}
        self.on_failure: Optional[Callable] = None
        self._failure_seen = False

    def task_terminal(self, rec):
        fire = False
        with self.cond:
            self.open -= 1
            if rec.state is TaskState.FAILED and not self._failure_seen:
                self._failure_seen = True
                fire = self.on_failure is not None
            self.cond.notify_all()
        if fire:
            self.on_failure(rec)

    def queue_cancel(self, provider, ids):
        with self.cond:
            self.cancel_queues.setdefault(provider, set()).update(ids)


class LocalSink:
    def __init__(self, state: BrokerState, provider: str, clock):
        self.state = state
        self.provider = provider
        self.clock = clock

    def now(self) -> float:
        return self.clock.now()

    def event(self, entity: str, name: str, t: float, clock):
        self.state.trace.of(ClockDomain(clock)).append(entity, name, t)

    def transition(self, task_id, target, t, clock, result=None) -> bool:
        rec = self.state.records[task_id]
        target = TaskState(target)
        with rec.lock:
            # the cancel latch: a terminal record keeps its state
            if rec.terminal:
                return False
            ev = rec.transition(target, t, ClockDomain(clock), result)
            self.state.trace.add(ev)
        if target.terminal:
            self.state.task_terminal(rec)
        return True

    def transition_many(self, task_ids, target, t, clock, results=None) -> list:
        results = results or {}
        return [tid for tid in task_ids
                if self.transition(tid, target, t, clock, results.get(tid))]

    def take_canceled(self) -> set:
        state = self.state
        with state.cond:
            q = state.cancel_queues.get(self.provider)
            if not q:
                return set()
            out = set(q)
            q.clear()
            return out

    def flush(self):
        pass

    def apply(self, messages):
        """Replay a batch of RemoteSink messages."""
        for msg in messages:
            if msg[0] == "e":
                _, entity, name, t, clock = msg
                self.event(entity, name, t, clock)
            else:
                _, ids, target, t, clock, results = msg
                self.transition_many(ids, target, t, clock, results)


class RemoteSink:
    """Worker-process side. ``conn`` carries messages up and commands down."""

    def __init__(self, conn, provider: str, clock):
        self.conn = conn
        self.provider = provider
        self.clock = clock
        self.buffer: list = []
        self.teardown_requested = False
        self._pending_cancel: set = set()

    def now(self) -> float:
        return self.clock.now()

    def event(self, entity, name, t, clock):
        self.buffer.append(("e", entity, name, t, ClockDomain(clock).value))

    def transition(self, task_id, target, t, clock, result=None) -> bool:
        self.transition_many([task_id], target, t, clock, {task_id: result} if result else None)
        return True

    def transition_many(self, task_ids, target, t, clock, results=None) -> list:
        ids = list(task_ids)
        if ids:
            self.buffer.append(("m", ids, TaskState(target).value, t, ClockDomain(clock).value,
                                results or None))
        return ids

    def flush(self):
        if self.buffer:
            self.conn.send(("msgs", self.buffer))
            self.buffer = []

    def poll_commands(self):
        while self.conn.poll():
            cmd = self.conn.recv()
            if cmd[0] == "cancel":
                self._pending_cancel.update(cmd[1])
            elif cmd[0] == "teardown":
                self.teardown_requested = True

    def take_canceled(self) -> set:
        self.poll_commands()
        out = self._pending_cancel
        self._pending_cancel = set()
        return out
