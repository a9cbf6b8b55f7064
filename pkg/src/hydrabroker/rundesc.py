"""Run descriptions: YAML/JSON files that fix providers, scenarios and a
workload (or workflow), plus the driver that executes one run and writes its
CSV artifacts.

Top-level keys::

    run_id, seed, output, mode (SCPP|MCPP), timeout_s
    broker:    {executor: auto|thread|process, manifests: memory|disk, clock: wall|tick}
    data:      {local_root, sandbox_root}
    providers: [...]            scenarios: {name: {...}}
    workload:  {on_task_failure, default_policy, max_containers_per_pod, groups: [...], tasks: [...]}
    workflow:  {name, instances, bindings, stages: [...]}
    sweep:     {scale: [1, 2, 4]}   multiplies group counts / workflow instances
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .broker import Broker, FailurePolicy, Policy, Workload, split_workload
from .core import TaskDescription, TaskKind, make_clock
from .data import DataManager
from .errors import HydraError, ParseError, TeardownFailure
from .managers import PartitionMode
from .metrics import compute_metrics, export, provider_counts
from .providers import ProviderRegistry, load_registry
from .sim.scenario import load_scenario
from .workflow import StagedWorkflow, bind_blocks, bind_round_robin, run_workflows, stage_templates

TOP_KEYS = {"run_id", "seed", "output", "mode", "timeout_s", "broker", "data", "providers",
            "scenarios", "workload", "workflow", "sweep", "description"}
BROKER_KEYS = {"executor", "manifests", "clock", "poll_instants"}
WORKLOAD_KEYS = {"on_task_failure", "default_policy", "max_containers_per_pod", "groups", "tasks",
                 "id"}
GROUP_KEYS = {"count", "prefix", "provider", "kind", "image", "command", "executable", "arguments",
              "cpus", "gpus", "memory_mb", "duration_s", "inputs", "fetch_traces"}
WORKFLOW_KEYS = {"name", "instances", "bindings", "stages"}
TASK_KEYS = {"id", "kind", "image", "command", "executable", "arguments", "cpus", "gpus",
             "memory_mb", "provider", "inputs", "fetch_traces", "expected_duration_s", "after"}

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_TERMINATED = 0, 1, 2, 3


def _require_keys(raw, allowed, where):
    if not isinstance(raw, Mapping):
        raise ParseError(f"{where} must be a mapping")
    extra = set(raw) - allowed
    if extra:
        raise ParseError(f"{where}: unknown keys {sorted(extra)}")


@dataclass
class RunDescription:
    path: Optional[str]
    base_dir: Optional[str]
    raw: Mapping
    registry: ProviderRegistry
    run_id: str = "run"
    seed: int = 0
    output: Optional[str] = None
    mode: PartitionMode = PartitionMode.SCPP
    executor: str = "auto"
    manifests: str = "memory"
    clock: str = "wall"
    poll_instants: int = 64
    timeout_s: float = 600.0
    scales: tuple = (1,)
    workload: Optional[Mapping] = None
    workflow: Optional[Mapping] = None
    data: Optional[Mapping] = None

    # -- workload / workflow construction -----------------------------------

    def tasks(self, seed: Optional[int] = None, scale: int = 1) -> list:
        seed = self.seed if seed is None else seed
        w = self.workload or {}
        out = []
        for gi, g in enumerate(w.get("groups") or ()):
            out.extend(_group_tasks(g, gi, seed, scale))
        for i, t in enumerate(w.get("tasks") or ()):
            out.append(_task(t, f"workload.tasks[{i}]"))
        return out

    def build_workload(self, seed: Optional[int] = None, scale: int = 1) -> Workload:
        w = self.workload or {}
        return Workload(
            self.tasks(seed, scale),
            default_policy=Policy.parse(w.get("default_policy", "ROUND_ROBIN")),
            partition_mode=self.mode,
            on_task_failure=FailurePolicy(str(w.get("on_task_failure", "CONTINUE")).upper()),
            id=str(w.get("id", self.run_id)),
            max_containers_per_pod=w.get("max_containers_per_pod"),
        )

    def build_workflow(self, scale: int = 1) -> StagedWorkflow:
        wf = self.workflow
        n = int(wf.get("instances", 1)) * scale
        names = self.registry.names
        binding = wf.get("bindings", "round_robin")
        if isinstance(binding, Mapping):
            # provider -> instance count, dealt out in blocks in listed order
            total = sum(int(v) for v in binding.values())
            bindings = {}
            k = 0
            for p, count in binding.items():
                for _ in range(int(count) * scale):
                    bindings[k] = str(p)
                    k += 1
            if total * scale != n:
                raise ParseError(f"workflow.bindings cover {total * scale} instances, expected {n}")
        elif binding == "blocks":
            bindings = bind_blocks(n, names)
        elif binding == "round_robin":
            bindings = bind_round_robin(n, names)
        else:
            raise ParseError(f"workflow.bindings: unknown value {binding!r}")
        return StagedWorkflow(str(wf.get("name", "wf")), stage_templates(wf.get("stages")), n,
                              bindings)

    def data_manager(self) -> Optional[DataManager]:
        if not self.data:
            return None
        base = Path(self.base_dir or ".")
        local = base / self.data.get("local_root", ".")
        sandbox = base / self.data.get("sandbox_root", "sandbox")
        return DataManager(str(local), str(sandbox), self.registry.names)


def _spec_int(v, rng, where):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ParseError(f"{where}: ranges are [lo, hi]")
        return rng.randint(int(v[0]), int(v[1]))
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{where}: expected an integer or [lo, hi], got {v!r}")
    return v


def _spec_float(v, rng, where):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ParseError(f"{where}: ranges are [lo, hi]")
        return round(rng.uniform(float(v[0]), float(v[1])), 6)
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: expected a number or [lo, hi], got {v!r}") from None


def _group_tasks(g, gi, seed, scale) -> list:
    where = f"workload.groups[{gi}]"
    _require_keys(g, GROUP_KEYS, where)
    if "count" not in g:
        raise ParseError(f"{where}.count is required")
    rng = random.Random(f"{seed}:group:{gi}")
    kind = TaskKind(str(g.get("kind", "CONTAINER")).upper())
    prefix = str(g.get("prefix", f"g{gi}-"))
    count = int(g["count"]) * scale
    out = []
    for i in range(count):
        out.append(TaskDescription(
            id=f"{prefix}{i:05d}",
            kind=kind,
            image=g.get("image", "busybox:latest") if kind is TaskKind.CONTAINER else None,
            command=tuple(g.get("command", ("true",))),
            executable=g.get("executable", "/bin/true") if kind is TaskKind.EXECUTABLE else None,
            arguments=tuple(g.get("arguments", ())),
            cpus=_spec_int(g.get("cpus", 1), rng, f"{where}.cpus"),
            gpus=_spec_int(g.get("gpus", 0), rng, f"{where}.gpus"),
            memory_mb=_spec_int(g.get("memory_mb", 1024), rng, f"{where}.memory_mb"),
            provider=g.get("provider"),
            inputs=tuple(str(x).replace("{i}", str(i)) for x in g.get("inputs", ())),
            fetch_traces=bool(g.get("fetch_traces", False)),
            expected_duration_s=_spec_float(g.get("duration_s", 1.0), rng, f"{where}.duration_s"),
        ))
    return out


def _task(raw, where) -> TaskDescription:
    _require_keys(raw, TASK_KEYS, where)
    kw = dict(raw)
    for key in ("command", "arguments", "inputs"):
        if key in kw:
            kw[key] = tuple(kw[key])
    try:
        return TaskDescription(**kw)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from exc


def load_run(source, base_dir=None) -> RunDescription:
    """Parse a run description from a path or an already-loaded mapping.

    ``base_dir`` anchors relative scenario and data paths of a mapping source.
    """
    path = None
    if isinstance(source, Mapping):
        raw = source
        base_dir = str(base_dir) if base_dir is not None else None
    else:
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ParseError(f"cannot read run description {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ParseError(f"{path}: malformed run description: {exc}") from exc
        base_dir = str(path.resolve().parent)
    _require_keys(raw, TOP_KEYS, "run description")
    has_w, has_f = raw.get("workload") is not None, raw.get("workflow") is not None
    if has_w == has_f:
        raise ParseError("run description needs exactly one of 'workload' or 'workflow'")
    registry = load_registry(raw, base_dir)
    broker = raw.get("broker") or {}
    _require_keys(broker, BROKER_KEYS, "broker")
    if has_w:
        _require_keys(raw["workload"], WORKLOAD_KEYS, "workload")
    else:
        _require_keys(raw["workflow"], WORKFLOW_KEYS, "workflow")
    sweep = raw.get("sweep") or {}
    _require_keys(sweep, {"scale"}, "sweep")
    scales = tuple(int(s) for s in sweep.get("scale", (1,)))
    if not scales or min(scales) < 1:
        raise ParseError("sweep.scale must list positive integers")
    data = raw.get("data")
    if data is not None:
        _require_keys(data, {"local_root", "sandbox_root"}, "data")
    try:
        mode = PartitionMode(str(raw.get("mode", "SCPP")).upper())
    except ValueError:
        raise ParseError(f"mode must be SCPP or MCPP, got {raw.get('mode')!r}") from None
    clock = str(broker.get("clock", "wall"))
    if clock not in ("wall", "tick"):
        raise ParseError(f"broker.clock must be wall or tick, got {clock!r}")
    manifests = str(broker.get("manifests", "memory"))
    if manifests not in ("memory", "disk"):
        raise ParseError(f"broker.manifests must be memory or disk, got {manifests!r}")
    executor = str(broker.get("executor", "auto"))
    if executor not in ("auto", "thread", "process"):
        raise ParseError(f"broker.executor must be auto, thread or process, got {executor!r}")
    return RunDescription(
        path=str(path) if path else None, base_dir=base_dir, raw=raw, registry=registry,
        run_id=str(raw.get("run_id", path.stem if path else "run")),
        seed=int(raw.get("seed", 0)), output=raw.get("output"), mode=mode,
        executor=executor, manifests=manifests, clock=clock,
        poll_instants=int(broker.get("poll_instants", 64)),
        timeout_s=float(raw.get("timeout_s", 600.0)), scales=scales,
        workload=raw.get("workload"), workflow=raw.get("workflow"), data=data,
    )


def validate_run(desc: RunDescription) -> list:
    """Every defect found without executing anything; empty means ok."""
    defects = []
    for name, errs in desc.registry.defective().items():
        defects.extend(f"provider {name}: {e}" for e in errs)
    for name, cfg in desc.registry.providers.items():
        ref = cfg.scenario_ref
        if not ref or desc.registry.validation.get(name):
            continue
        try:
            load_scenario(ref, desc.registry.base_dir, desc.registry.scenarios)
        except (HydraError, ValueError) as exc:
            defects.append(f"provider {name}: {exc}")
    try:
        if desc.workload is not None:
            for scale in desc.scales:
                split_workload(desc.registry, desc.build_workload(scale=scale))
        else:
            for scale in desc.scales:
                wf = desc.build_workflow(scale)
                unknown = sorted({p for p in wf.bindings.values() if p not in desc.registry})
                if unknown:
                    defects.append(f"workflow binds unknown providers {unknown}")
    except (HydraError, ValueError) as exc:
        defects.append(str(exc))
    return defects


# -- execution -----------------------------------------------------------------


@dataclass
class RunOutcome:
    run_id: str
    seed: int
    scale: int
    report: object
    counts: dict
    paths: dict
    exit_code: int = EXIT_OK
    teardown_failures: dict = field(default_factory=dict)


def execute_run(desc: RunDescription, out_dir, seed: Optional[int] = None, scale: int = 1,
                run_id: Optional[str] = None, broker: Optional[Broker] = None) -> RunOutcome:
    """Execute the described workload/workflow once and write its CSVs into ``out_dir``."""
    seed = desc.seed if seed is None else seed
    run_id = run_id or desc.run_id
    out_dir = Path(out_dir)
    own = broker is None
    if own:
        broker = Broker(desc.registry, executor=desc.executor, manifest_mode=desc.manifests,
                        run_dir=str(out_dir), clock=make_clock(desc.clock),
                        data=desc.data_manager(), seed=seed, poll_instants=desc.poll_instants)
    try:
        failures = {}
        if desc.workflow is not None:
            wr = run_workflows(broker, desc.build_workflow(scale), desc.mode, desc.timeout_s)
            trace, report, counts = wr.result.trace, wr.metrics, wr.result.counts
            failures = wr.failures
            terminated = False
        else:
            workload = desc.build_workload(seed, scale)
            handle = broker.submit_workload(workload)
            try:
                result = broker.wait(handle, desc.timeout_s)
            finally:
                try:
                    broker.shutdown(handle)
                except TeardownFailure as exc:
                    failures = exc.failures
            trace, counts = handle.trace, result.counts
            report = compute_metrics(trace, provider_counts(handle, desc.registry))
            terminated = (workload.on_task_failure is FailurePolicy.TERMINATE_ALL
                          and "FAILED" in counts)
    finally:
        if own:
            broker.close()
    paths = export(report, trace, out_dir, run_id)
    code = EXIT_TERMINATED if terminated else (EXIT_ERROR if failures else EXIT_OK)
    return RunOutcome(run_id, seed, scale, report, counts, paths, code, failures)
