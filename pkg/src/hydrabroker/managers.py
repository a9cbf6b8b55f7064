"""The service-manager contract and the pieces every manager shares.

A manager owns one provider's sub-workload: it acquires resources, prepares
and submits the tasks, monitors them to final states and releases the
resources when asked. It reports through a *sink* (see ``sinks``), never by
touching broker state directly, so the same code runs in a thread or in a
worker process.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .core import VIRTUAL, WALL, TaskResult, TaskState
from .errors import HydraError, NotFound, TeardownFailure


class PartitionMode(str, enum.Enum):
    SCPP = "SCPP"
    MCPP = "MCPP"


@dataclass
class ManagerOptions:
    mode: PartitionMode = PartitionMode.SCPP
    manifest_mode: str = "memory"
    run_dir: Optional[str] = None
    max_containers_per_pod: Optional[int] = None
    # simulation instants consumed per monitor iteration
    poll_instants: int = 64
    data: Optional[object] = None


class ServiceManager:
    """Base class. Subclasses implement ``execute``; ``teardown`` is shared."""

    kind: str = ""

    def __init__(self, cfg, backend, sink, options: Optional[ManagerOptions] = None):
        self.cfg = cfg
        self.name = cfg.name
        self.backend = backend
        self.sink = sink
        self.options = options or ManagerOptions()
        self.requested = False
        self.ready = False
        self.released = False
        self._canceled: set = set()

    def execute(self, tasks: list):
        raise NotImplementedError

    # -- shared steps ----------------------------------------------------------

    def _refresh_canceled(self) -> set:
        new = self.sink.take_canceled()
        self._canceled |= new
        return new

    def _live(self, tasks):
        self._refresh_canceled()
        return [t for t in tasks if t.id not in self._canceled]

    def _fail(self, tasks, reason: str, t: float, clock=WALL):
        if not tasks:
            return
        res = TaskResult(None, reason=reason)
        self.sink.transition_many([x.id for x in tasks], TaskState.FAILED, t, clock,
                                  {x.id: res for x in tasks})

    def _cut_orphans(self, tasks, all_ids):
        """Cancel tasks whose predecessor in this sub-workload will never run."""
        kept = []
        alive = set()
        gone = []
        for t in tasks:
            if t.after and t.after in all_ids and t.after not in alive:
                gone.append(t)
            else:
                kept.append(t)
                alive.add(t.id)
        if gone:
            res = TaskResult(None, reason="dependency failed")
            self.sink.transition_many([t.id for t in gone], TaskState.CANCELED, self.sink.now(),
                                      WALL, {t.id: res for t in gone})
        return kept

    def _stage(self, tasks, t0: float):
        """Stage inputs into the provider sandbox; returns (ok tasks, release time)."""
        data = self.options.data
        needs = [x for x in tasks if x.inputs]
        if not needs:
            return tasks, t0
        if data is None:
            self._fail(needs, "staging: no data manager configured", t0, VIRTUAL)
            return [x for x in tasks if not x.inputs], t0
        bw = getattr(getattr(self.backend, "scenario", None), "stage_bandwidth_mb_s", None)
        t = t0
        bad = set()
        for task in needs:
            try:
                staged = data.stage_in(task, self.name, t, bw)
            except (NotFound, HydraError, OSError) as exc:
                self._fail([task], f"staging: {exc}", t, VIRTUAL)
                bad.add(task.id)
                continue
            for f in staged:
                self.sink.event(task.id, "stage_in_start", f.t_start, VIRTUAL)
                self.sink.event(task.id, "stage_in_done", f.t_done, VIRTUAL)
                t = f.t_done
        return [x for x in tasks if x.id not in bad], t

    def _apply(self, updates, fetch: dict):
        """Apply backend status updates, batching runs of equal (state, t)."""
        if not updates:
            return
        sink = self.sink
        i = 0
        n = len(updates)
        while i < n:
            u = updates[i]
            j = i + 1
            while j < n and updates[j].state is u.state and updates[j].t == u.t:
                j += 1
            ids = [x.task_id for x in updates[i:j]]
            if u.state is TaskState.RUNNING:
                sink.transition_many(ids, u.state, u.t, VIRTUAL)
            else:
                results = {}
                for x in updates[i:j]:
                    blob = None
                    if x.state is TaskState.DONE and fetch.get(x.task_id):
                        blob = self.backend.fetch_trace(x.task_id)
                    results[x.task_id] = TaskResult(x.exit_code, trace_blob=blob, reason=x.reason)
                sink.transition_many(ids, u.state, u.t, VIRTUAL, results)
            i = j

    def _monitor(self, tasks):
        """Consume provider updates until every submitted task is final."""
        fetch = {x.id: x.fetch_traces for x in tasks if x.fetch_traces}
        backend = self.backend
        if self._canceled:
            self._apply(backend.cancel(sorted(self._canceled)), fetch)
        while not backend.finished:
            new = self._refresh_canceled()
            if new:
                self._apply(backend.cancel(sorted(new)), fetch)
            self._apply(backend.poll(self.options.poll_instants), fetch)
            self.sink.flush()
        self.sink.flush()

    def cancel(self, task_ids):
        """Direct cancel (used when a manager is driven without a broker)."""
        self._canceled |= set(task_ids)

    def teardown(self):
        """Release provider resources; emits teardown_start/done (virtual)."""
        if not self.requested or self.released:
            return
        self.released = True
        sink = self.sink
        if not self.ready:
            # nothing was allocated; close the request interval where it began
            sink.event(self.name, "teardown_start", 0.0, VIRTUAL)
            sink.event(self.name, "teardown_done", 0.0, VIRTUAL)
            sink.flush()
            return
        sink.event(self.name, "teardown_start", self.backend.now, VIRTUAL)
        try:
            _, t_done = self.backend.teardown()
        except TeardownFailure:
            sink.flush()
            raise
        finally:
            # anything still live was aborted by the release
            self._apply(self.backend.poll(0), {})
        sink.event(self.name, "teardown_done", t_done, VIRTUAL)
        sink.flush()


MANAGERS: dict = {}


def register_manager(kind: str, cls):
    """Register a manager class for a provider kind (the extension point)."""
    MANAGERS[str(kind)] = cls
    return cls


def manager_for(kind) -> type:
    key = str(getattr(kind, "value", kind))
    if key not in MANAGERS:
        # importing the built-ins registers them
        from . import caas, hpc  # noqa: F401
    try:
        return MANAGERS[key]
    except KeyError:
        raise HydraError(f"no manager registered for provider kind {key!r}") from None
