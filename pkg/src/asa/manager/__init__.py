"""Central coordinator: node registry, scheduling, batches, control, API."""

from .core import (
    Batch,
    ManagerCore,
    ManagerError,
    NodeInfo,
    NotRoutable,
    RunState,
    UnknownRun,
    UnknownTemplate,
    ValidationFailed,
)

__all__ = [
    "Batch",
    "ManagerCore",
    "ManagerError",
    "NodeInfo",
    "NotRoutable",
    "RunState",
    "UnknownRun",
    "UnknownTemplate",
    "ValidationFailed",
]
