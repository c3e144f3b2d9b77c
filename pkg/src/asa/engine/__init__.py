"""Deterministic fixed-step agent simulation engine.

One run = one scenario + one seed, stepped synchronously; per-agent
SplitMix64 streams make record logs bit-reproducible. Built-in models
cover waypoint platforms, range sensors, and a weapon with missile
fly-out; extensions load at runtime against the same behavior contract.
"""

from .core import (
    AgentState,
    EngineError,
    PerceptionView,
    RunOutcome,
    SimClock,
    World,
    run_invocations,
    run_simulation,
)
from .models import BUILTIN_MANIFESTS
from .registry import (
    ArtifactUnloadable,
    DuplicateModel,
    LoadError,
    ManifestInvalid,
    ModelBehavior,
    ModelRegistry,
    builtin_registry,
    register_extension,
)
from .wez import NoHitAtAnyRange, estimate_wez_max_range

__all__ = [
    "AgentState",
    "ArtifactUnloadable",
    "BUILTIN_MANIFESTS",
    "DuplicateModel",
    "EngineError",
    "LoadError",
    "ManifestInvalid",
    "ModelBehavior",
    "ModelRegistry",
    "NoHitAtAnyRange",
    "PerceptionView",
    "RunOutcome",
    "SimClock",
    "World",
    "builtin_registry",
    "estimate_wez_max_range",
    "register_extension",
    "run_invocations",
    "run_simulation",
]
