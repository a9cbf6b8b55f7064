"""Discrete-event engine shared by the simulated CAAS and HPC backends.

A job is a pod (CAAS) or a single task (HPC). It holds a (cpus, gpus, mem)
demand on one node and one or more units (containers or task processes).
Rules, all in virtual seconds:

- a released job joins a FIFO queue; after every instant at which resources
  were freed or jobs released, the queue is scanned in order and each job is
  placed first-fit by node index (later jobs may backfill past blocked ones)
- units start at placement + schedule latency + startup
- a unit exits ``duration / speed_factor`` after it started
- once every unit of a job has ended, the node is freed after ``teardown``
- jobs with an ``after`` dependency are released when the predecessor's last
  unit exits successfully; a failed or canceled predecessor cancels them
- jobs still queued when nothing else can happen are reported unschedulable
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..kernels import place_first_fit

# heap ranks: at equal t, frees come before exits, releases and starts
REAP, EXIT, RELEASE, START = 0, 1, 2, 3

# job status
_PENDING_DEP, _WAITING, _PLACED, _REAPING, _REAPED, _DROPPED = range(6)
# unit status
_U_PENDING, _U_RUNNING, _U_ENDED = range(3)


@dataclass(frozen=True)
class Labels:
    schedule: str
    start: str
    exit: str
    reap: str
    cancel: str
    unschedulable: str
    abort: str


CAAS_LABELS = Labels("POD_SCHEDULED", "CONTAINER_STARTED", "CONTAINER_EXITED",
                     "POD_REAPED", "CONTAINER_CANCELED", "POD_UNSCHEDULABLE",
                     "CONTAINER_ABORTED")
HPC_LABELS = Labels("TASK_PLACED", "TASK_STARTED", "TASK_EXITED", "TASK_RELEASED",
                    "TASK_CANCELED", "TASK_UNSCHEDULABLE", "TASK_ABORTED")


@dataclass(frozen=True)
class SimEvent:
    t: float
    seq: int
    kind: str
    job: str
    unit: Optional[str] = None
    node: Optional[int] = None
    exit_code: Optional[int] = None
    reason: Optional[str] = None
    units: tuple = ()
    demand: Optional[tuple] = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None and v != ()}


@dataclass(frozen=True)
class SimUnit:
    id: str
    duration_s: float = 0.0
    exit_code: int = 0


@dataclass(frozen=True)
class SimJob:
    id: str
    demand: tuple
    units: tuple
    release_t: float = 0.0
    after: Optional[str] = None


@dataclass(frozen=True)
class Timing:
    schedule_latency_s: float = 0.0
    startup_s: float = 0.0
    teardown_s: float = 0.0
    # jitter keys looked up for each of the three latencies
    names: tuple = ("pod_schedule_latency_s", "container_startup_s", "container_teardown_s")


class DesEngine:
    def __init__(self, nodes: Sequence[tuple], timing: Timing, labels: Labels, *,
                 t0: float = 0.0, rng: Optional[random.Random] = None,
                 jitter: Optional[Mapping[str, float]] = None, speed_factor: float = 1.0,
                 deadline: Optional[float] = None, deadline_label: str = "PILOT_EXPIRED",
                 lost_at: Optional[float] = None, lost_label: str = "PROVIDER_LOST",
                 cluster_id: str = "cluster"):
        self.capacity = np.array(nodes, dtype=np.int64).reshape(-1, 3)
        self._free = self.capacity.copy()
        self.timing = timing
        self.labels = labels
        self.now = float(t0)
        self.rng = rng or random.Random(0)
        self.jitter = dict(jitter or {})
        self.speed = float(speed_factor)
        self.cluster_id = cluster_id
        self.events: list = []
        self.aborted: Optional[str] = None

        self.jobs: list = []
        self._jidx: dict = {}
        self._uidx: dict = {}
        self._status: list = []
        self._node: list = []
        self._ustate: list = []
        self._live: list = []
        self._bad: list = []
        self._dependents: dict = {}
        self._demand = np.zeros((0, 3), dtype=np.int64)
        self._wait = np.zeros(0, dtype=np.int64)
        self._released: list = []
        self._dirty = False
        self._heap: list = []
        self._tick = 0
        # aborts only fire while work is still pending in the heap
        stops = []
        if deadline is not None:
            stops.append((float(deadline), deadline_label, "walltime"))
        if lost_at is not None:
            stops.append((float(lost_at), lost_label, "provider lost"))
        self._stop = min(stops) if stops else None

    # -- helpers -------------------------------------------------------------

    def _push(self, t, rank, j, u):
        heapq.heappush(self._heap, (t, rank, j, u, self._tick))
        self._tick += 1

    def _emit(self, t, kind, job, **kw):
        ev = SimEvent(t, len(self.events), kind, job, **kw)
        self.events.append(ev)
        return ev

    def _draw(self, which: int, value: float) -> float:
        if value == 0.0:
            return 0.0
        frac = self.jitter.get(self.timing.names[which], 0.0)
        if frac == 0.0:
            return value
        return value * (1.0 + frac * (2.0 * self.rng.random() - 1.0))

    @property
    def drained(self) -> bool:
        return not self._heap and not len(self._wait) and not self._released

    # -- submission ----------------------------------------------------------

    def submit(self, jobs: Iterable[SimJob]):
        jobs = list(jobs)
        base = len(self.jobs)
        for k, job in enumerate(jobs):
            j = base + k
            if job.id in self._jidx:
                raise ValueError(f"duplicate job id {job.id!r}")
            self._jidx[job.id] = j
            for u, unit in enumerate(job.units):
                self._uidx[unit.id] = (j, u)
            self.jobs.append(job)
            self._node.append(-1)
            self._ustate.append([_U_PENDING] * len(job.units))
            self._live.append(len(job.units))
            self._bad.append(False)
            self._status.append(_PENDING_DEP)
        if jobs:
            self._demand = np.concatenate(
                [self._demand, np.array([j.demand for j in jobs], dtype=np.int64).reshape(-1, 3)])
        for k, job in enumerate(jobs):
            j = base + k
            if self.aborted:
                self._end_units(j, self.now, self.labels.abort, self.aborted)
                self._status[j] = _DROPPED
            elif job.after is None:
                self._push(max(job.release_t, self.now), RELEASE, j, -1)
            elif job.after not in self._jidx:
                raise ValueError(f"{job.id}: unknown predecessor {job.after!r}")
            else:
                p = self._jidx[job.after]
                if self._status[p] == _DROPPED or (self._live[p] == 0 and self._bad[p]):
                    self._cancel_job(j, self.now, "dependency failed")
                elif self._live[p] == 0:
                    self._push(max(job.release_t, self.now), RELEASE, j, -1)
                else:
                    self._dependents.setdefault(p, []).append(j)

    # -- main loop -----------------------------------------------------------

    def advance(self, until: Optional[float] = None) -> list:
        """Process every event with ``t <= until`` (everything when None).

        Returns the events emitted by this call, in emission order.
        """
        start = len(self.events)
        heap = self._heap
        while True:
            if not heap:
                if self._dirty:
                    self._schedule(self.now)
                    if heap:
                        continue
                if len(self._wait):
                    self._drain(self.now)
                break
            t = heap[0][0]
            if self._stop is not None and t >= self._stop[0]:
                t_stop, label, reason = self._stop
                if until is not None and t_stop > until:
                    break
                self.now = t_stop
                self._abort(t_stop, label, reason)
                break
            if until is not None and t > until:
                break
            entry = heapq.heappop(heap)
            self.now = t
            self._dispatch(entry)
            if self._dirty and (not heap or heap[0][0] > t):
                self._schedule(t)
        if until is not None and until > self.now and not heap:
            self.now = float(until)
        return self.events[start:]

    def run(self) -> list:
        self.advance(None)
        return self.events

    def next_time(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def _dispatch(self, entry):
        t, rank, j, u, _ = entry
        if rank == REAP:
            self._status[j] = _REAPED
            self._free[self._node[j]] += self._demand[j]
            self._emit(t, self.labels.reap, self.jobs[j].id, node=self._node[j],
                       demand=self.jobs[j].demand)
            self._dirty = True
        elif rank == EXIT:
            states = self._ustate[j]
            if states[u] != _U_RUNNING:
                return
            states[u] = _U_ENDED
            unit = self.jobs[j].units[u]
            self._emit(t, self.labels.exit, self.jobs[j].id, unit=unit.id,
                       node=self._node[j], exit_code=unit.exit_code)
            if unit.exit_code != 0:
                self._bad[j] = True
            self._unit_ended(j, t)
        elif rank == RELEASE:
            if self._status[j] != _PENDING_DEP:
                return
            self._status[j] = _WAITING
            self._released.append(j)
            self._dirty = True
        else:
            if self._status[j] != _PLACED:
                return
            job = self.jobs[j]
            states = self._ustate[j]
            for u2, unit in enumerate(job.units):
                if states[u2] != _U_PENDING:
                    continue
                states[u2] = _U_RUNNING
                self._emit(t, self.labels.start, job.id, unit=unit.id, node=self._node[j])
                self._push(t + unit.duration_s / self.speed, EXIT, j, u2)

    def _schedule(self, t):
        self._dirty = False
        if self._released:
            self._wait = np.concatenate([self._wait, np.array(self._released, dtype=np.int64)])
            self._released = []
        if not len(self._wait):
            return
        placed = place_first_fit(self._free, self._demand, self._wait)
        hit = placed >= 0
        if not hit.any():
            return
        sched, start = self.timing.schedule_latency_s, self.timing.startup_s
        for j, n in zip(self._wait[hit].tolist(), placed[hit].tolist()):
            self._status[j] = _PLACED
            self._node[j] = n
            job = self.jobs[j]
            self._emit(t, self.labels.schedule, job.id, node=n, demand=job.demand)
            delay = self._draw(0, sched) + self._draw(1, start)
            self._push(t + delay, START, j, -1)
        self._wait = self._wait[~hit]

    def _unit_ended(self, j, t):
        self._live[j] -= 1
        if self._live[j]:
            return
        if self._status[j] == _PLACED:
            self._status[j] = _REAPING
            self._push(t + self._draw(2, self.timing.teardown_s), REAP, j, -1)
        elif self._status[j] in (_WAITING, _PENDING_DEP):
            if self._status[j] == _WAITING:
                self._drop_waiting([j])
            self._status[j] = _DROPPED
        self._job_finished(j, t)

    def _job_finished(self, j, t):
        for d in self._dependents.pop(j, ()):
            if self._bad[j]:
                self._cancel_job(d, t, "dependency failed")
            else:
                self._push(max(self.jobs[d].release_t, t), RELEASE, d, -1)

    def _drop_waiting(self, js):
        if self._released:
            self._released = [j for j in self._released if j not in set(js)]
        if len(self._wait):
            self._wait = self._wait[~np.isin(self._wait, np.asarray(js, dtype=np.int64))]

    def _end_units(self, j, t, kind, reason, skip_running=False):
        job = self.jobs[j]
        states = self._ustate[j]
        for u, unit in enumerate(job.units):
            if states[u] == _U_ENDED or (skip_running and states[u] == _U_RUNNING):
                continue
            states[u] = _U_ENDED
            self._live[j] -= 1
            self._emit(t, kind, job.id, unit=unit.id, node=self._node[j] if self._node[j] >= 0 else None,
                       reason=reason)

    def _cancel_job(self, j, t, reason):
        """Cancel a job that never started (dependency chains)."""
        self._bad[j] = True
        if self._status[j] == _WAITING:
            self._drop_waiting([j])
        self._status[j] = _DROPPED
        self._end_units(j, t, self.labels.cancel, reason)
        self._job_finished(j, t)

    # -- external control ----------------------------------------------------

    def cancel(self, unit_ids: Iterable[str], reason: str = "canceled") -> list:
        """Cancel units at the current virtual time. Unknown or ended ids are skipped."""
        start = len(self.events)
        t = self.now
        for uid in unit_ids:
            loc = self._uidx.get(uid)
            if loc is None:
                continue
            j, u = loc
            states = self._ustate[j]
            if states[u] == _U_ENDED:
                continue
            states[u] = _U_ENDED
            self._bad[j] = True
            self._emit(t, self.labels.cancel, self.jobs[j].id, unit=uid,
                       node=self._node[j] if self._node[j] >= 0 else None, reason=reason)
            self._unit_ended(j, t)
        return self.events[start:]

    def abort(self, label: str, reason: str) -> list:
        """End everything still live at the current virtual time."""
        start = len(self.events)
        if not self.aborted:
            self._abort(self.now, label, reason)
            self._stop = None
        return self.events[start:]

    def _abort(self, t, label, reason):
        self.aborted = reason
        self._stop = None
        self._emit(t, label, self.cluster_id, reason=reason)
        for j in range(len(self.jobs)):
            if self._live[j]:
                self._bad[j] = True
                self._end_units(j, t, self.labels.abort, reason)
            if self._status[j] in (_PLACED, _REAPING):
                self._status[j] = _REAPED
                self._free[self._node[j]] += self._demand[j]
                self._emit(t, self.labels.reap, self.jobs[j].id, node=self._node[j],
                           demand=self.jobs[j].demand)
            elif self._status[j] in (_WAITING, _PENDING_DEP):
                self._status[j] = _DROPPED
        self._heap.clear()
        self._wait = self._wait[:0]
        self._released = []
        self._dependents.clear()
        self._dirty = False

    def _drain(self, t):
        stuck = self._wait.tolist()
        self._wait = self._wait[:0]
        for j in stuck:
            job = self.jobs[j]
            live = tuple(unit.id for u, unit in enumerate(job.units)
                         if self._ustate[j][u] != _U_ENDED)
            self._emit(t, self.labels.unschedulable, job.id, units=live, demand=job.demand,
                       reason="unschedulable")
            for u in range(len(job.units)):
                if self._ustate[j][u] != _U_ENDED:
                    self._ustate[j][u] = _U_ENDED
                    self._live[j] -= 1
            self._status[j] = _DROPPED
            self._bad[j] = True
            self._job_finished(j, t)
        # dependents canceled above may not have produced new work; nothing to run


def replay_capacity(events: Iterable[SimEvent], capacity, labels: Labels) -> list:
    """Replay schedule/reap events and return every capacity violation found."""
    free = np.array(capacity, dtype=np.int64).reshape(-1, 3).copy()
    held = {}
    violations = []
    for ev in sorted(events, key=lambda e: e.seq):
        if ev.kind == labels.schedule:
            free[ev.node] -= np.asarray(ev.demand, dtype=np.int64)
            held[ev.job] = ev.node
            if (free[ev.node] < 0).any():
                violations.append((ev.t, ev.job, ev.node, free[ev.node].tolist()))
        elif ev.kind == labels.reap:
            if held.pop(ev.job, None) is None:
                violations.append((ev.t, ev.job, ev.node, "reaped without schedule"))
            free[ev.node] += np.asarray(ev.demand, dtype=np.int64)
    return violations


def canonical(events: Iterable[SimEvent]) -> list:
    """Order-insensitive comparison form: (t, kind, job, unit, node, exit_code)."""
    return sorted((round(e.t, 9), e.kind, e.job, e.unit or "", -1 if e.node is None else e.node,
                   -999 if e.exit_code is None else e.exit_code) for e in events)


def dump_events(events: Iterable[SimEvent]) -> bytes:
    lines = [json.dumps(e.as_dict(), sort_keys=True) for e in events]
    return ("\n".join(lines) + "\n").encode("utf-8")
