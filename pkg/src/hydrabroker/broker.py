"""The broker: splits a workload per provider, runs one manager per provider
concurrently, aggregates task states and tears everything down."""

from __future__ import annotations

import enum
import itertools
import logging
import multiprocessing
import os
import threading
import traceback
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import WALL, RunTrace, TaskRecord, TaskResult, TaskState, WallClock
from .errors import (
    EmptyWorkload,
    HydraError,
    InvalidProvider,
    InvalidWorkload,
    TeardownFailure,
    UnknownProvider,
    WaitTimeout,
)
from .managers import ManagerOptions, PartitionMode, manager_for
from .providers import ProviderKind
from .sim.backends import open_backend
from .sinks import BrokerState, LocalSink, RemoteSink

log = logging.getLogger(__name__)


class FailurePolicy(str, enum.Enum):
    CONTINUE = "CONTINUE"
    TERMINATE_ALL = "TERMINATE_ALL"


@dataclass(frozen=True)
class Policy:
    """Placement of unbound tasks: ROUND_ROBIN over the registry, or SINGLE(provider)."""

    kind: str = "ROUND_ROBIN"
    provider: Optional[str] = None

    @classmethod
    def parse(cls, value) -> "Policy":
        if isinstance(value, Policy):
            return value
        text = str(value or "ROUND_ROBIN").strip()
        if text.upper() == "ROUND_ROBIN":
            return cls()
        for sep in ("(", ":"):
            head, _, rest = text.partition(sep)
            if head.strip().upper() == "SINGLE" and rest:
                return cls("SINGLE", rest.rstrip(")").strip())
        raise InvalidWorkload(f"unknown distribution policy {value!r}")

    def __str__(self):
        return "ROUND_ROBIN" if self.kind == "ROUND_ROBIN" else f"SINGLE({self.provider})"


@dataclass
class Workload:
    tasks: list
    default_policy: Policy = field(default_factory=Policy)
    partition_mode: PartitionMode = PartitionMode.SCPP
    on_task_failure: FailurePolicy = FailurePolicy.CONTINUE
    id: str = "workload"
    max_containers_per_pod: Optional[int] = None

    def __post_init__(self):
        self.tasks = list(self.tasks)
        self.default_policy = Policy.parse(self.default_policy)
        self.partition_mode = PartitionMode(self.partition_mode)
        self.on_task_failure = FailurePolicy(self.on_task_failure)


def split_workload(registry, workload: Workload) -> dict:
    """Per-provider sub-workloads, keyed in registry order, task order preserved."""
    if not workload.tasks:
        raise EmptyWorkload(f"workload {workload.id!r} has no tasks")
    names = registry.names
    seen = set()
    for t in workload.tasks:
        if t.id in seen:
            raise InvalidWorkload(f"duplicate task id {t.id!r}")
        seen.add(t.id)
        if t.provider is not None and t.provider not in registry:
            raise UnknownProvider(f"task {t.id} is bound to unknown provider {t.provider!r}")
    pol = workload.default_policy
    if pol.kind == "SINGLE" and pol.provider not in registry:
        raise UnknownProvider(f"default policy names unknown provider {pol.provider!r}")
    rr = itertools.cycle(names)
    subs = {n: [] for n in names}
    where = {}
    for t in workload.tasks:
        if t.provider is not None:
            p = t.provider
        elif pol.kind == "SINGLE":
            p = pol.provider
        else:
            p = next(rr)
        subs[p].append(t)
        where[t.id] = p
    for t in workload.tasks:
        if t.after is None:
            continue
        if t.after not in where:
            raise InvalidWorkload(f"{t.id}: unknown predecessor {t.after!r}")
        if where[t.after] != where[t.id]:
            raise InvalidWorkload(f"{t.id}: predecessor {t.after!r} runs on another provider")
    for p, tasks in subs.items():
        if registry.providers[p].kind is ProviderKind.CAAS:
            for t in tasks:
                if t.kind.value != "CONTAINER":
                    raise InvalidWorkload(f"{t.id}: executable tasks cannot run on CAAS provider {p!r}")
    return {p: ts for p, ts in subs.items() if ts}


@dataclass
class WorkloadResult:
    workload_id: str
    counts: dict
    records: dict
    trace: RunTrace

    @property
    def ok(self) -> bool:
        return set(self.counts) <= {"DONE"}

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class WorkloadHandle:
    id: str
    workload: Workload
    sub_workloads: dict
    records: dict
    trace: RunTrace
    state: BrokerState
    runners: dict
    failures: dict = field(default_factory=dict)
    shut_down: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)
    released: threading.Event = field(default_factory=threading.Event)

    def provider_of(self, task_id: str) -> Optional[str]:
        for p, tasks in self.sub_workloads.items():
            if any(t.id == task_id for t in tasks):
                return p
        return None


# -- runners -------------------------------------------------------------------


class ThreadRunner:
    """One thread per manager: execute, wait for the teardown request, release."""

    def __init__(self, cfg, registry, backend_factory, state, clock, options, seed):
        self.cfg = cfg
        self.name = cfg.name
        self.state = state
        self.sink = LocalSink(state, cfg.name, clock)
        self.backend = backend_factory(cfg, registry, seed)
        self.manager = manager_for(cfg.kind)(cfg, self.backend, self.sink, options)
        self._teardown = threading.Event()
        self.executed = threading.Event()
        self.teardown_error: Optional[str] = None
        self.error: Optional[str] = None
        self.thread = threading.Thread(target=self._run, name=f"manager-{cfg.name}", daemon=True)
        self.tasks: list = []

    def start(self, tasks):
        self.tasks = tasks
        self.thread.start()

    def _run(self):
        try:
            self.manager.execute(self.tasks)
        except Exception as exc:  # keep the workload from hanging
            self.error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
            log.error("manager %s failed: %s", self.name, self.error)
            _fail_open(self.sink, self.tasks, f"manager error: {exc}")
        self.executed.set()
        self._teardown.wait()
        try:
            self.manager.teardown()
        except TeardownFailure as exc:
            self.teardown_error = "; ".join(exc.failures.values())
        except Exception as exc:
            self.teardown_error = str(exc)

    def notify_cancel(self, ids):
        pass  # the sink reads the shared cancel queue

    def request_teardown(self):
        self._teardown.set()

    def join(self, timeout=None):
        if self.thread.is_alive() or self.thread.ident is not None:
            self.thread.join(timeout)

    def close(self):
        pass


def _fail_open(sink, tasks, reason):
    res = TaskResult(None, reason=reason)
    for t in tasks:
        sink.transition(t.id, TaskState.FAILED, sink.now(), WALL, res)


def _worker_main(conn):
    """Entry point of a pre-started worker process."""
    msg = conn.recv()
    if msg[0] != "run":
        return
    _, cfg, registry, factory, tasks, options, clock, seed = msg
    sink = RemoteSink(conn, cfg.name, clock)
    manager = None
    try:
        backend = factory(cfg, registry, seed)
        manager = manager_for(cfg.kind)(cfg, backend, sink, options)
        manager.execute(tasks)
        sink.flush()
        conn.send(("executed", None))
    except Exception as exc:
        sink.flush()
        conn.send(("executed", "".join(traceback.format_exception_only(type(exc), exc)).strip()))
    while not sink.teardown_requested:
        cmd = conn.recv()
        if cmd[0] == "teardown":
            sink.teardown_requested = True
    err = None
    try:
        if manager is not None:
            manager.teardown()
    except TeardownFailure as exc:
        err = "; ".join(exc.failures.values())
    except Exception as exc:
        err = str(exc)
    sink.flush()
    conn.send(("torn", err))
    conn.close()


_CTX = None


def _context():
    global _CTX
    if _CTX is None:
        method = "forkserver" if "forkserver" in multiprocessing.get_all_start_methods() else "spawn"
        _CTX = multiprocessing.get_context(method)
        if method == "forkserver":
            _CTX.set_forkserver_preload(["hydrabroker.broker", "numpy", "yaml"])
    return _CTX


class ProcessRunner:
    """A manager in its own process, so managers' CPU work can overlap.

    The process is started when the runner is created (broker startup), not
    when the workload arrives. Messages from the worker are applied to the
    broker state by a pump thread.
    """

    def __init__(self, cfg, registry, backend_factory, clock, options, seed):
        self.cfg = cfg
        self.name = cfg.name
        self.registry = registry
        self.factory = backend_factory
        self.clock = clock
        self.options = options
        self.seed = seed
        ctx = _context()
        self.conn, child = ctx.Pipe(duplex=True)
        self.proc = ctx.Process(target=_worker_main, args=(child,), name=f"manager-{cfg.name}",
                                daemon=True)
        self.proc.start()
        child.close()
        self._send_lock = threading.Lock()
        self.executed = threading.Event()
        self.torn = threading.Event()
        self.error: Optional[str] = None
        self.teardown_error: Optional[str] = None
        self.sink: Optional[LocalSink] = None
        self.tasks: list = []
        self.pump: Optional[threading.Thread] = None

    def bind(self, state, options):
        self.sink = LocalSink(state, self.name, self.clock)
        self.options = options

    def _send(self, msg):
        with self._send_lock:
            self.conn.send(msg)

    def start(self, tasks):
        self.tasks = tasks
        self.pump = threading.Thread(target=self._pump, name=f"pump-{self.name}", daemon=True)
        self.pump.start()
        self._send(("run", self.cfg, self.registry, self.factory, tasks, self.options,
                    self.clock, self.seed))

    def _pump(self):
        try:
            while True:
                kind, payload = self.conn.recv()
                if kind == "msgs":
                    self.sink.apply(payload)
                elif kind == "executed":
                    if payload:
                        self.error = payload
                        log.error("manager %s failed: %s", self.name, payload)
                        _fail_open(self.sink, self.tasks, f"manager error: {payload}")
                    self.executed.set()
                elif kind == "torn":
                    self.teardown_error = payload
                    self.torn.set()
                    return
        except (EOFError, OSError) as exc:
            if not self.executed.is_set():
                self.error = f"worker lost: {exc!r}"
                _fail_open(self.sink, self.tasks, self.error)
                self.executed.set()
            if not self.torn.is_set():
                self.teardown_error = self.teardown_error or "worker exited before teardown"
                self.torn.set()

    def notify_cancel(self, ids):
        try:
            self._send(("cancel", sorted(ids)))
        except OSError:
            pass

    def request_teardown(self):
        try:
            self._send(("teardown",))
        except OSError:
            pass

    def join(self, timeout=None):
        self.torn.wait(timeout)
        self.proc.join(timeout)

    def close(self):
        if self.proc.is_alive():
            self.proc.terminate()
        self.proc.join(1)
        self.conn.close()


def resolve_executor(executor: str) -> str:
    if executor == "auto":
        return "process" if (os.cpu_count() or 1) >= 2 else "thread"
    if executor not in ("thread", "process"):
        raise ValueError(f"executor must be auto, thread or process, got {executor!r}")
    return executor


class Broker:
    """Maps workloads onto per-provider managers and runs them concurrently.

    ``backend_factory(cfg, registry, seed)`` builds the provider backend; the
    default resolves ``sim:`` endpoints. With the ``process`` executor one
    worker per provider is started here, ahead of any workload.
    """

    def __init__(self, registry, backend_factory: Optional[Callable] = None,
                 executor: str = "auto", manifest_mode: str = "memory",
                 run_dir: Optional[str] = None, clock=None, data=None,
                 seed: Optional[int] = None, poll_instants: int = 64):
        bad = registry.defective()
        if bad:
            name, defects = next(iter(bad.items()))
            raise InvalidProvider(name, defects)
        self.registry = registry
        self.factory = backend_factory or open_backend
        self.executor = resolve_executor(executor)
        self.manifest_mode = manifest_mode
        self.run_dir = run_dir
        self.clock = clock or WallClock()
        self.data = data
        self.seed = seed
        self.poll_instants = poll_instants
        self._workers: dict = {}
        if self.executor == "process":
            self._prestart()

    def _prestart(self):
        for name, cfg in self.registry.providers.items():
            self._workers[name] = ProcessRunner(cfg, self.registry, self.factory,
                                                self.clock.fork(), None, self.seed)

    def _options(self, workload):
        return ManagerOptions(
            mode=workload.partition_mode, manifest_mode=self.manifest_mode, run_dir=self.run_dir,
            max_containers_per_pod=workload.max_containers_per_pod,
            poll_instants=self.poll_instants, data=self.data)

    def submit_workload(self, workload: Workload) -> WorkloadHandle:
        subs = split_workload(self.registry, workload)  # raises before any dispatch
        trace = RunTrace()
        trace.wall.append(workload.id, "workload_accepted", self.clock.now())
        records = {t.id: TaskRecord(t) for t in workload.tasks}
        state = BrokerState(records, trace, list(subs))
        options = self._options(workload)
        runners = {}
        for name, tasks in subs.items():
            cfg = self.registry.providers[name]
            if self.executor == "process":
                runner = self._workers.pop(name, None) or ProcessRunner(
                    cfg, self.registry, self.factory, self.clock.fork(), None, self.seed)
                runner.bind(state, options)
            else:
                runner = ThreadRunner(cfg, self.registry, self.factory, state, self.clock.fork(),
                                      options, self.seed)
            runners[name] = runner
        handle = WorkloadHandle(workload.id, workload, subs, records, trace, state, runners)
        if workload.on_task_failure is FailurePolicy.TERMINATE_ALL:
            state.on_failure = lambda rec: threading.Thread(
                target=self._terminate_all, args=(handle,), daemon=True).start()
        for name, tasks in subs.items():
            runners[name].start(tasks)
        return handle

    def _terminate_all(self, handle):
        self.cancel(handle, None)
        try:
            self.shutdown(handle)
        except TeardownFailure:
            pass  # recorded on the handle

    def wait(self, handle: WorkloadHandle, timeout: Optional[float] = None) -> WorkloadResult:
        st = handle.state
        with st.cond:
            if not st.cond.wait_for(lambda: st.open == 0, timeout):
                raise WaitTimeout(f"workload {handle.id!r}: {st.open} tasks not final after {timeout}s")
        counts = Counter(r.state.value for r in handle.records.values())
        return WorkloadResult(handle.id, dict(sorted(counts.items())), handle.records, handle.trace)

    def cancel(self, handle: WorkloadHandle, task_ids=None):
        """Cancel tasks (all when ``task_ids`` is None). Terminal tasks keep their state."""
        if task_ids is None:
            targets = list(handle.records)
        else:
            targets = list(task_ids)
        by_provider: dict = {}
        provider_of = {t.id: p for p, ts in handle.sub_workloads.items() for t in ts}
        sink = LocalSink(handle.state, "", self.clock)
        for tid in targets:
            rec = handle.records.get(tid)
            if rec is None:
                handle.trace.wall.append(str(tid), "cancel_ignored", self.clock.now())
                continue
            with rec.lock:
                if rec.terminal:
                    continue
                # never stamp earlier than the record's latest broker-side event
                t = max(self.clock.now(), rec._last_t.get(WALL, 0.0))
                sink.transition(tid, TaskState.CANCELED, t, WALL, TaskResult(None, reason="canceled"))
            by_provider.setdefault(provider_of[tid], set()).add(tid)
        for p, ids in by_provider.items():
            handle.state.queue_cancel(p, ids)
            handle.runners[p].notify_cancel(ids)

    def shutdown(self, handle: WorkloadHandle, timeout: Optional[float] = None):
        """Cancel what is left, release every provider's resources, join managers.

        Teardown failures are collected for all providers, then raised together.
        """
        with handle.lock:
            first = not handle.shut_down
            handle.shut_down = True
        if not first:
            # another caller (e.g. the TERMINATE_ALL path) is releasing; wait for it
            handle.released.wait(timeout)
            if handle.failures:
                raise TeardownFailure(handle.failures)
            return
        try:
            self._release(handle, timeout)
        finally:
            handle.released.set()
        if handle.failures:
            raise TeardownFailure(handle.failures)

    def _release(self, handle, timeout):
        self.cancel(handle, [r.id for r in handle.records.values() if not r.terminal])
        for r in handle.runners.values():
            r.request_teardown()
        for name, r in handle.runners.items():
            r.join(timeout)
            if r.teardown_error:
                handle.failures[name] = r.teardown_error
        for r in handle.runners.values():
            r.close()

    def close(self):
        for r in self._workers.values():
            r.close()
        self._workers.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def submit_workload(broker: Broker, workload: Workload) -> WorkloadHandle:
    return broker.submit_workload(workload)


def run_workload(broker: Broker, workload: Workload, timeout: Optional[float] = None):
    """Submit, wait and shut down; returns (result, teardown failures)."""
    handle = broker.submit_workload(workload)
    try:
        result = broker.wait(handle, timeout)
    finally:
        failures = {}
        try:
            broker.shutdown(handle)
        except TeardownFailure as exc:
            failures = exc.failures
    return result, failures
