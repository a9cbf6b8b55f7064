"""Simulated-provider scenarios (the ``scenarios`` section or a scenario file).

All values are synthetic desk-scale stand-ins, not measurements of any real
platform.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Optional

import yaml

from ..errors import ParseError
from ..resources import NodeCapacity


@dataclass(frozen=True)
class CaasParams:
    cluster_provision_s: float = 0.0
    pod_schedule_latency_s: float = 0.0
    container_startup_s: float = 0.0
    container_teardown_s: float = 0.0
    cluster_teardown_s: float = 0.0
    nodes: int = 1
    node: NodeCapacity = field(default_factory=lambda: NodeCapacity(16, 0, 65536))


@dataclass(frozen=True)
class HpcParams:
    queue_wait_s: float = 0.0
    pilot_bootstrap_s: float = 0.0
    pilot_teardown_s: float = 0.0
    task_launch_s: float = 0.0
    nodes: int = 1
    cores_per_node: int = 128
    gpus_per_node: int = 0
    memory_mb_per_node: int = 262144


@dataclass(frozen=True)
class Faults:
    """Failure injection for tests and failure-path experiments."""

    submit_rejected: bool = False
    provider_lost_at_s: Optional[float] = None
    connector_down: bool = False
    queue_rejected: bool = False
    allocation_timeout_s: Optional[float] = None
    teardown_fails: bool = False
    exit_codes: Mapping[str, int] = field(default_factory=dict)
    failure_rate: float = 0.0


@dataclass(frozen=True)
class SimScenario:
    seed: int = 0
    caas: CaasParams = field(default_factory=CaasParams)
    hpc: HpcParams = field(default_factory=HpcParams)
    jitter: Mapping[str, float] = field(default_factory=dict)
    stage_bandwidth_mb_s: Optional[float] = None
    # durations are divided by this (e.g. physical cores vs hyperthreads)
    speed_factor: float = 1.0
    faults: Faults = field(default_factory=Faults)

    def __post_init__(self):
        for group in (self.caas, self.hpc):
            for f in fields(group):
                v = getattr(group, f.name)
                if f.name.endswith("_s") and v < 0:
                    raise ValueError(f"{f.name} must be >= 0")
        if self.caas.nodes < 1 or self.hpc.nodes < 1 or self.hpc.cores_per_node < 1:
            raise ValueError("scenario node counts must be positive")
        for k, j in self.jitter.items():
            if not 0.0 <= j < 1.0:
                raise ValueError(f"jitter for {k} must be in [0, 1), got {j}")
        if self.speed_factor <= 0:
            raise ValueError("speed_factor must be positive")
        if not 0.0 <= self.faults.failure_rate <= 1.0:
            raise ValueError("failure_rate must be in [0, 1]")
        if self.stage_bandwidth_mb_s is not None and self.stage_bandwidth_mb_s <= 0:
            raise ValueError("stage_bandwidth_mb_s must be positive")

    def with_seed(self, seed: int) -> "SimScenario":
        return replace(self, seed=seed)

    def rng(self, stream: str) -> random.Random:
        # string seeds hash with sha512, independent of PYTHONHASHSEED
        return random.Random(f"{self.seed}:{stream}")

    def jittered(self, rng: random.Random, name: str, value: float) -> float:
        j = self.jitter.get(name, 0.0)
        if j == 0.0 or value == 0.0:
            return value
        return value * (1.0 + j * (2.0 * rng.random() - 1.0))


_JITTER_KEYS = {f.name for f in fields(CaasParams)} | {f.name for f in fields(HpcParams)} | {"duration"}


def _build(cls, raw, where, nested=None):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ParseError(f"{where} must be a mapping")
    names = {f.name for f in fields(cls)}
    extra = set(raw) - names
    if extra:
        raise ParseError(f"{where}: unknown keys {sorted(extra)}")
    kw = dict(raw)
    for key, sub in (nested or {}).items():
        if key in kw:
            kw[key] = sub(kw[key], f"{where}.{key}")
    return cls(**kw)


def _node(raw, where):
    if not isinstance(raw, Mapping):
        raise ParseError(f"{where} must be a mapping")
    try:
        return NodeCapacity(**raw)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from exc


def parse_scenario(raw, where="scenario") -> SimScenario:
    if not isinstance(raw, Mapping):
        raise ParseError(f"{where} must be a mapping")
    try:
        caas = _build(CaasParams, raw.get("caas"), f"{where}.caas", {"node": _node})
        hpc = _build(HpcParams, raw.get("hpc"), f"{where}.hpc")
        faults = _build(Faults, raw.get("faults"), f"{where}.faults")
        jitter = dict(raw.get("jitter") or {})
        bad = set(jitter) - _JITTER_KEYS
        if bad:
            raise ParseError(f"{where}.jitter: unknown parameters {sorted(bad)}")
        extra = set(raw) - {"seed", "caas", "hpc", "faults", "jitter",
                            "stage_bandwidth_mb_s", "speed_factor"}
        if extra:
            raise ParseError(f"{where}: unknown keys {sorted(extra)}")
        return SimScenario(
            seed=int(raw.get("seed", 0)),
            caas=caas,
            hpc=hpc,
            jitter=jitter,
            stage_bandwidth_mb_s=raw.get("stage_bandwidth_mb_s"),
            speed_factor=float(raw.get("speed_factor", 1.0)),
            faults=faults,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{where}: {exc}") from exc


def load_scenario(ref: str, base_dir=None, inline: Optional[Mapping] = None) -> SimScenario:
    """Resolve a ``sim:`` reference: an inline scenario name, else a file path."""
    if inline and ref in inline:
        return parse_scenario(inline[ref], f"scenarios.{ref}")
    path = Path(ref)
    if not path.is_absolute() and base_dir:
        path = Path(base_dir) / path
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"scenario not found: {ref}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: malformed scenario: {exc}") from exc
    return parse_scenario(raw, str(path))
