"""hydrabroker: acquire resources from several cloud/HPC providers at once,
partition task workloads for them, run the tasks to final states and measure
the broker's overhead from event traces. Providers are simulated."""

from .broker import (
    Broker,
    FailurePolicy,
    Policy,
    Workload,
    WorkloadHandle,
    WorkloadResult,
    run_workload,
    split_workload,
    submit_workload,
)
from .core import (
    VIRTUAL,
    WALL,
    ClockDomain,
    DataRef,
    RunTrace,
    TaskDescription,
    TaskKind,
    TaskRecord,
    TaskResult,
    TaskState,
    TickClock,
    Trace,
    TraceEvent,
    WallClock,
    append_event,
    replay,
    transition,
)
from .data import DataManager, DataOpKind
from .kernels import BACKEND as KERNEL_BACKEND
from .managers import ManagerOptions, PartitionMode, ServiceManager, register_manager
from .metrics import MetricsReport, ProviderCounts, compute_metrics, export, provider_counts
from .providers import ProviderConfig, ProviderKind, ProviderRegistry, load_registry, resolve
from .workflow import StagedWorkflow, StageTemplate, WorkflowResult, run_workflows

__version__ = "0.1.0"

__all__ = [
    "Broker", "ClockDomain", "DataManager", "DataOpKind", "DataRef", "FailurePolicy",
    "KERNEL_BACKEND", "ManagerOptions", "MetricsReport", "PartitionMode", "Policy",
    "ProviderConfig", "ProviderCounts", "ProviderKind", "ProviderRegistry", "RunTrace",
    "ServiceManager", "StageTemplate", "StagedWorkflow", "TaskDescription", "TaskKind",
    "TaskRecord", "TaskResult", "TaskState", "TickClock", "Trace", "TraceEvent", "VIRTUAL",
    "WALL", "WallClock", "Workload", "WorkloadHandle", "WorkloadResult", "WorkflowResult",
    "append_event", "compute_metrics", "export", "load_registry", "provider_counts", "register_manager",
    "replay", "resolve", "run_workflows", "run_workload", "split_workload", "submit_workload",
    "transition",
]
