from .backends import SimCaasBackend, SimHpcConnector, StatusUpdate, open_backend
from .engine import (
    CAAS_LABELS,
    HPC_LABELS,
    DesEngine,
    SimEvent,
    SimJob,
    SimUnit,
    Timing,
    canonical,
    dump_events,
    replay_capacity,
)
from .scenario import CaasParams, Faults, HpcParams, SimScenario, load_scenario, parse_scenario

__all__ = [
    "CAAS_LABELS", "HPC_LABELS", "CaasParams", "DesEngine", "Faults", "HpcParams",
    "SimCaasBackend", "SimEvent", "SimHpcConnector", "SimJob", "SimScenario", "SimUnit",
    "StatusUpdate", "Timing", "canonical", "dump_events", "load_scenario", "open_backend",
    "parse_scenario", "replay_capacity",
]
