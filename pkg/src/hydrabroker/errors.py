"""Exception hierarchy. Every error raised by the package derives from HydraError."""

from __future__ import annotations


class HydraError(Exception):
    pass


# core
class InvalidTask(HydraError, ValueError):
    pass


class IllegalTransition(HydraError):
    def __init__(self, task_id, src, dst):
        super().__init__(f"{task_id}: illegal transition {src.value} -> {dst.value}")
        self.task_id = task_id
        self.src = src
        self.dst = dst


class StaleTimestamp(HydraError):
    pass


class UnknownEventName(HydraError, ValueError):
    pass


class ClockDomainMismatch(HydraError):
    pass


# provider proxy
class ParseError(HydraError, ValueError):
    pass


class DuplicateProvider(HydraError):
    pass


class UnknownProvider(HydraError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class InvalidProvider(HydraError):
    def __init__(self, name, defects):
        super().__init__(f"provider {name!r} failed validation: {'; '.join(defects)}")
        self.name = name
        self.defects = tuple(defects)


# broker
class EmptyWorkload(HydraError, ValueError):
    pass


class InvalidWorkload(HydraError, ValueError):
    pass


class WaitTimeout(HydraError, TimeoutError):
    pass


class TeardownFailure(HydraError):
    """Raised by shutdown after every provider was attempted.

    ``failures`` maps provider name to the reason its teardown failed.
    """

    def __init__(self, failures):
        text = "; ".join(f"{k}: {v}" for k, v in failures.items())
        super().__init__(f"teardown failed for {text}")
        self.failures = dict(failures)


# managers
class TaskTooLarge(HydraError, ValueError):
    def __init__(self, task_id, dimension, requested, capacity):
        super().__init__(
            f"task {task_id} requests {requested} {dimension}, node capacity is {capacity}"
        )
        self.task_id = task_id
        self.dimension = dimension


class SubmitRejected(HydraError):
    pass


class ProviderLost(HydraError):
    pass


class QueueRejected(HydraError):
    pass


class AllocationTimeout(HydraError):
    pass


class ConnectorUnavailable(HydraError):
    pass


class CapacityExceeded(HydraError):
    pass


# data manager
class DataError(HydraError):
    pass


class NotFound(DataError, FileNotFoundError):
    pass


class AlreadyExists(DataError, FileExistsError):
    pass


class CrossEndpointLink(DataError):
    pass


class PermissionDenied(DataError, PermissionError):
    pass


# metrics
class IncompleteTrace(HydraError):
    def __init__(self, missing):
        if isinstance(missing, str):
            missing = [missing]
        super().__init__("incomplete trace, missing: " + ", ".join(missing))
        self.missing = tuple(missing)


class MixedClockDomain(HydraError):
    pass


class IoFailure(HydraError, OSError):
    pass
