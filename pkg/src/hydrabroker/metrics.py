"""Run metrics from traces, and the trace/metrics CSV artifacts.

OVH   broker processing per provider: partition_start -> batch_submit_ack (wall)
TH    tasks submitted / OVH
TPT   resource_request -> teardown_done (virtual)
TTX   first task_start -> last task terminal event (virtual)

The aggregate OVH is the measure of the union of the per-provider intervals,
so it shrinks below their sum exactly when managers overlap.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .core import (
    TERMINAL_EVENTS,
    VIRTUAL,
    WALL,
    ClockDomain,
    RunTrace,
    TraceEvent,
    event_sort_key,
)
from .errors import IncompleteTrace, IoFailure, MixedClockDomain

TRACE_COLUMNS = ("run_id", "entity_id", "event", "t_seconds", "clock")
METRICS_COLUMNS = ("run_id", "provider", "tasks", "pods", "mode", "ovh_s", "th_tasks_per_s",
                   "tpt_s", "ttx_s")

_WALL_ONLY = frozenset({"workload_accepted", "partition_start", "manifest_build_start",
                        "manifest_build_done", "batch_submit_start"})
_VIRTUAL_ONLY = frozenset({"resource_request", "resource_ready", "task_start", "task_done",
                           "teardown_start", "teardown_done", "stage_in_start", "stage_in_done"})


@dataclass(frozen=True)
class ProviderCounts:
    task_ids: tuple
    submitted: int
    pods: int = 0
    mode: str = "SCPP"


@dataclass(frozen=True)
class ProviderMetrics:
    provider: str
    tasks: int
    pods: int
    mode: str
    ovh_s: float
    th_tasks_per_s: float
    tpt_s: float
    ttx_s: float
    submitted: int = 0
    # metric -> ((start event, t), (end event, t)); None when undefined
    boundaries: Mapping = field(default_factory=dict)
    interval: Optional[tuple] = None


@dataclass(frozen=True)
class MetricsReport:
    providers: Mapping[str, ProviderMetrics]
    aggregate: ProviderMetrics

    def rows(self) -> list:
        return [self.providers[k] for k in sorted(self.providers)] + [self.aggregate]


def _events(trace) -> list:
    if isinstance(trace, RunTrace):
        return list(trace)
    return list(trace)


def _check_domains(events):
    for e in events:
        if e.clock is VIRTUAL and e.name in _WALL_ONLY:
            raise MixedClockDomain(f"{e.name} for {e.entity_id} must be wall-clock")
        if e.clock is WALL and e.name in _VIRTUAL_ONLY:
            raise MixedClockDomain(f"{e.name} for {e.entity_id} must be virtual-clock")


def union_length(intervals: Iterable[tuple]) -> float:
    spans = sorted((a, b) for a, b in intervals if b > a)
    total = 0.0
    cur_a = cur_b = None
    for a, b in spans:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total


def compute_metrics(trace, counts: Mapping[str, ProviderCounts]) -> MetricsReport:
    events = _events(trace)
    if not events:
        raise IncompleteTrace("workload_accepted (trace is empty)")
    _check_domains(events)
    by_entity: dict = {}
    for e in events:
        by_entity.setdefault(e.entity_id, []).append(e)
    accepted = [e.t for e in events if e.name == "workload_accepted"]
    t_accept = min(accepted) if accepted else None

    missing = []
    for p, c in counts.items():
        for tid in c.task_ids:
            if not any(e.name in TERMINAL_EVENTS for e in by_entity.get(tid, ())):
                missing.append(f"terminal event for {tid}")
        pev = by_entity.get(p, ())
        if any(e.name == "resource_request" for e in pev) and not any(
                e.name == "teardown_done" for e in pev):
            missing.append(f"teardown_done for {p}")
    if missing:
        raise IncompleteTrace(missing)

    out = {}
    all_starts, all_ends, tpt_ends, intervals = [], [], [], []
    total_submitted = total_tasks = total_pods = 0
    for p, c in counts.items():
        pev = by_entity.get(p, ())
        wall = [e for e in pev if e.clock is WALL]
        starts = [e.t for e in wall if e.name == "partition_start"]
        acks = [e.t for e in wall if e.name == "batch_submit_ack"]
        b = {}
        interval = None
        if starts:
            s_ev, s = "partition_start", min(starts)
        elif t_accept is not None:
            s_ev, s = "workload_accepted", t_accept
        else:
            s_ev, s = None, None
        if acks:
            e_ev, e_t = "batch_submit_ack", max(acks)
        elif wall:
            last = max(wall, key=lambda x: x.t)
            e_ev, e_t = last.name, last.t
        else:
            e_ev, e_t = None, None
        ovh = 0.0
        if s is not None and e_t is not None and e_t >= s:
            ovh = e_t - s
            interval = (s, e_t)
            intervals.append(interval)
            b["ovh"] = ((s_ev, s), (e_ev, e_t))
        th = c.submitted / ovh if ovh > 0 else 0.0

        virt = [e for e in pev if e.clock is VIRTUAL]
        req = [e.t for e in virt if e.name == "resource_request"]
        down = [e.t for e in virt if e.name == "teardown_done"]
        tpt = 0.0
        if req and down:
            tpt = max(down) - min(req)
            b["tpt"] = (("resource_request", min(req)), ("teardown_done", max(down)))
            tpt_ends.append((min(req), max(down)))

        task_starts, task_ends = [], []
        for tid in c.task_ids:
            for e in by_entity.get(tid, ()):
                if e.clock is not VIRTUAL:
                    continue
                if e.name == "task_start":
                    task_starts.append(e.t)
                elif e.name in TERMINAL_EVENTS:
                    task_ends.append(e.t)
        ttx = 0.0
        if task_starts and task_ends:
            ttx = max(0.0, max(task_ends) - min(task_starts))
            b["ttx"] = (("task_start", min(task_starts)), ("task_terminal", max(task_ends)))
            all_starts.append(min(task_starts))
            all_ends.append(max(task_ends))
        out[p] = ProviderMetrics(p, len(c.task_ids), c.pods, c.mode, ovh, th, tpt, ttx,
                                 c.submitted, b, interval)
        total_submitted += c.submitted
        total_tasks += len(c.task_ids)
        total_pods += c.pods

    agg_ovh = union_length(intervals)
    agg_b = {}
    if intervals:
        agg_b["ovh"] = (("union_start", min(a for a, _ in intervals)),
                        ("union_end", max(b for _, b in intervals)))
    agg_tpt = 0.0
    if tpt_ends:
        agg_tpt = max(b for _, b in tpt_ends) - min(a for a, _ in tpt_ends)
        agg_b["tpt"] = (("resource_request", min(a for a, _ in tpt_ends)),
                        ("teardown_done", max(b for _, b in tpt_ends)))
    agg_ttx = 0.0
    if all_starts:
        agg_ttx = max(all_ends) - min(all_starts)
        agg_b["ttx"] = (("task_start", min(all_starts)), ("task_terminal", max(all_ends)))
    modes = sorted({c.mode for c in counts.values()})
    agg = ProviderMetrics("ALL", total_tasks, total_pods, "+".join(modes), agg_ovh,
                          total_submitted / agg_ovh if agg_ovh > 0 else 0.0,
                          agg_tpt, agg_ttx, total_submitted, agg_b)
    return MetricsReport(out, agg)


# -- counts from a finished workload ---------------------------------------------


def provider_counts(handle, registry=None) -> dict:
    """ProviderCounts for every sub-workload of a (finished) WorkloadHandle.

    A task counts as submitted once its provider acknowledged it, even if it
    was canceled afterwards.
    """
    wall = handle.trace.wall.events()
    pods: dict = {}
    for e in wall:
        if e.name == "manifest_build_start":
            pods.setdefault(e.entity_id.rsplit(".pod", 1)[0], set()).add(e.entity_id)
    out = {}
    for p, tasks in handle.sub_workloads.items():
        ids = tuple(t.id for t in tasks)
        submitted = sum(1 for tid in ids
                        if any(ev.name == "batch_submit_ack" for ev in handle.records[tid].events))
        kind = None
        if registry is not None:
            kind = registry.providers[p].kind.value
        if kind == "HPC":
            mode = "PILOT"
        elif any(t.after for t in tasks):
            mode = "SCPP"
        else:
            mode = handle.workload.partition_mode.value
        out[p] = ProviderCounts(ids, submitted, len(pods.get(p, ())), mode)
    return out


# -- CSV artifacts -------------------------------------------------------------


def _num(x: float) -> str:
    return repr(float(x))


def trace_csv(trace, run_id: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for e in sorted(_events(trace), key=event_sort_key):
        w.writerow((run_id, e.entity_id, e.name, _num(e.t), e.clock.value))
    return buf.getvalue()


def metrics_csv(report: MetricsReport, run_id: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for m in report.rows():
        w.writerow((run_id, m.provider, m.tasks, m.pods, m.mode, _num(m.ovh_s),
                    _num(m.th_tasks_per_s), _num(m.tpt_s), _num(m.ttx_s)))
    return buf.getvalue()


def export(report: MetricsReport, trace, destination, run_id: str = "run") -> dict:
    """Write trace.csv and metrics.csv into ``destination``; returns their paths."""
    if report is None or not _events(trace):
        raise IncompleteTrace("trace is empty")
    texts = {"trace": trace_csv(trace, run_id), "metrics": metrics_csv(report, run_id)}
    dest = Path(destination)
    paths = {}
    try:
        dest.mkdir(parents=True, exist_ok=True)
        for key, text in texts.items():
            path = dest / f"{key}.csv"
            tmp = path.with_suffix(".csv.tmp")
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, path)
            paths[key] = str(path)
    except OSError as exc:
        raise IoFailure(f"cannot write run artifacts to {dest}: {exc}") from exc
    return paths


def read_trace_csv(path) -> tuple:
    """Returns (run_id, events) from a trace.csv; checks the exact header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected trace header {rows[0] if rows else None}")
    run_ids = {r[0] for r in rows[1:]}
    if len(run_ids) > 1:
        raise ValueError(f"{path}: more than one run_id")
    events = [TraceEvent(r[1], r[2], float(r[3]), ClockDomain(r[4])) for r in rows[1:]]
    return (run_ids.pop() if run_ids else None), events


def read_metrics_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        rows = []
        for r in reader:
            row = dict(r)
            row["tasks"] = int(row["tasks"])
            row["pods"] = int(row["pods"])
            for k in ("ovh_s", "th_tasks_per_s", "tpt_s", "ttx_s"):
                row[k] = float(row[k])
            rows.append(row)
    return rows
