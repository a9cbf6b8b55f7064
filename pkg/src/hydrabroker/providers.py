"""Provider proxy: provider configurations, credential checks and the registry."""

from __future__ import annotations

import enum
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .errors import DuplicateProvider, InvalidProvider, ParseError, UnknownProvider


class ProviderKind(str, enum.Enum):
    CAAS = "CAAS"
    HPC = "HPC"


REQUIRED_CREDENTIALS = {
    ProviderKind.CAAS: ("token",),
    ProviderKind.HPC: ("username", "allocation"),
}

SIM_SCHEME = "sim:"
_FILE_SUFFIXES = {".run", ".yaml", ".yml", ".json"}


@dataclass(frozen=True)
class Limits:
    max_nodes: int
    vcpus_per_node: int
    gpus_per_node: int = 0
    memory_mb_per_node: int = 65536
    # optional HPC knobs
    concurrency_cap: Optional[int] = None
    walltime_s: Optional[int] = None
    queue: str = "batch"


@dataclass(frozen=True)
class ProviderConfig:
    name: str
    kind: ProviderKind
    endpoint: str
    credentials: Mapping[str, str] = field(default_factory=dict)
    limits: Limits = field(default_factory=lambda: Limits(1, 1))

    @property
    def scenario_ref(self) -> Optional[str]:
        if self.endpoint.startswith(SIM_SCHEME):
            return self.endpoint[len(SIM_SCHEME):]
        return None


@dataclass(frozen=True)
class ProviderRegistry:
    providers: Mapping[str, ProviderConfig]
    validation: Mapping[str, tuple]
    base_dir: Optional[str] = None
    # inline simulated-provider scenarios from the run description
    scenarios: Mapping[str, Mapping] = field(default_factory=dict)

    def ok(self, name: str) -> bool:
        return not self.validation.get(name, ("not registered",))

    @property
    def names(self) -> list:
        return list(self.providers)

    def defective(self) -> dict:
        return {k: v for k, v in self.validation.items() if v}

    def __len__(self):
        return len(self.providers)

    def __contains__(self, name):
        return name in self.providers


def _read_source(source):
    """Returns (document, base_dir)."""
    if isinstance(source, Mapping) or isinstance(source, list):
        return source, None
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, os.PathLike) or (
        isinstance(source, str) and "\n" not in source and ":" not in source
        and (Path(source).suffix in _FILE_SUFFIXES or Path(source).exists())
    ):
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ParseError(f"cannot read {path}: {exc}") from exc
        return _parse_text(text, str(path)), str(path.parent.resolve())
    if isinstance(source, io.IOBase):
        return _parse_text(source.read(), "<stream>"), None
    if isinstance(source, str):
        return _parse_text(source, "<string>"), None
    raise ParseError(f"unsupported config source: {type(source).__name__}")


def _parse_text(text, origin):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"{origin}: malformed document: {exc}") from exc


def _int(value, where):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{where} must be an integer, got {value!r}")
    return value


def _parse_limits(raw, where) -> Limits:
    if not isinstance(raw, Mapping):
        raise ParseError(f"{where}.limits must be a mapping")
    known = {"max_nodes", "vcpus_per_node", "gpus_per_node", "memory_mb_per_node",
             "concurrency_cap", "walltime_s", "queue"}
    extra = set(raw) - known
    if extra:
        raise ParseError(f"{where}.limits: unknown keys {sorted(extra)}")
    for key in ("max_nodes", "vcpus_per_node"):
        if key not in raw:
            raise ParseError(f"{where}.limits.{key} is required")
    kw = {}
    for key in known - {"queue"}:
        if raw.get(key) is not None:
            kw[key] = _int(raw[key], f"{where}.limits.{key}")
    if "queue" in raw:
        kw["queue"] = str(raw["queue"])
    return Limits(**kw)


def parse_provider(raw, index=0) -> ProviderConfig:
    where = f"providers[{index}]"
    if not isinstance(raw, Mapping):
        raise ParseError(f"{where} must be a mapping")
    for key in ("name", "kind", "endpoint"):
        if not raw.get(key):
            raise ParseError(f"{where}.{key} is required")
    try:
        kind = ProviderKind(str(raw["kind"]).upper())
    except ValueError:
        raise ParseError(f"{where}.kind must be CAAS or HPC, got {raw['kind']!r}") from None
    creds = raw.get("credentials") or {}
    if not isinstance(creds, Mapping):
        raise ParseError(f"{where}.credentials must be a mapping")
    return ProviderConfig(
        name=str(raw["name"]),
        kind=kind,
        endpoint=str(raw["endpoint"]),
        credentials={str(k): str(v) for k, v in creds.items()},
        limits=_parse_limits(raw.get("limits", {}), where),
    )


def validate_provider(cfg: ProviderConfig, base_dir=None, scenario_names=()) -> tuple:
    """Structural checks only: required credential keys, limits, endpoint."""
    defects = []
    for key in REQUIRED_CREDENTIALS[cfg.kind]:
        if not cfg.credentials.get(key):
            defects.append(f"missing key: {key}")
    lim = cfg.limits
    for key in ("max_nodes", "vcpus_per_node", "memory_mb_per_node"):
        if getattr(lim, key) <= 0:
            defects.append(f"limits.{key} must be positive")
    if lim.gpus_per_node < 0:
        defects.append("limits.gpus_per_node must be >= 0")
    if lim.concurrency_cap is not None and lim.concurrency_cap <= 0:
        defects.append("limits.concurrency_cap must be positive")
    if lim.walltime_s is not None and lim.walltime_s <= 0:
        defects.append("limits.walltime_s must be positive")
    ref = cfg.scenario_ref
    if ref is None:
        defects.append(f"unsupported endpoint {cfg.endpoint!r}: only sim: providers have connectors")
    elif not ref:
        defects.append("empty scenario reference")
    elif ref not in scenario_names:
        path = Path(ref)
        if not path.is_absolute() and base_dir:
            path = Path(base_dir) / path
        if not path.is_file():
            defects.append(f"scenario not found: {ref}")
    return tuple(defects)


def load_registry(config_source, base_dir=None) -> ProviderRegistry:
    """Parse a provider list (or a run description holding one) into a registry.

    ``config_source`` is a path, YAML/JSON text, bytes, a stream, or an already
    parsed document. Every provider carries a validation verdict: an empty
    tuple when it is usable, otherwise the list of defects.
    """
    doc, src_dir = _read_source(config_source)
    base_dir = base_dir or src_dir
    scenarios = {}
    if isinstance(doc, Mapping):
        scenarios = doc.get("scenarios") or {}
        if not isinstance(scenarios, Mapping):
            raise ParseError("'scenarios' must be a mapping")
        doc = doc.get("providers")
    if not isinstance(doc, list):
        raise ParseError("expected a 'providers' list")
    providers = {}
    validation = {}
    for i, raw in enumerate(doc):
        cfg = parse_provider(raw, i)
        if cfg.name in providers:
            raise DuplicateProvider(f"provider {cfg.name!r} defined more than once")
        providers[cfg.name] = cfg
        validation[cfg.name] = validate_provider(cfg, base_dir, tuple(scenarios))
    return ProviderRegistry(providers, validation, base_dir, dict(scenarios))


def resolve(registry: ProviderRegistry, name: str) -> ProviderConfig:
    if name not in registry.providers:
        raise UnknownProvider(f"unknown provider {name!r}")
    defects = registry.validation.get(name, ())
    if defects:
        raise InvalidProvider(name, defects)
    return registry.providers[name]
