"""Model registry and runtime extension loading.

An extension ships two files: a behaviors module (Python source exposing a
``BEHAVIORS`` mapping of model name to behavior class) and a JSON manifest
describing the parameters, components, and emitted tags the model accepts.
Extensions register at daemon startup from --ext-dir paths and can be
re-scanned on demand; built-in model names can never be shadowed.
"""

from __future__ import annotations

import importlib.util
import sys
from pathlib import Path
from typing import Callable, Iterable, Protocol, runtime_checkable

from ..manifest import ManifestError, ModelManifest


class LoadError(Exception):
    pass


class ManifestInvalid(LoadError):
    pass


class ArtifactUnloadable(LoadError):
    pass


class DuplicateModel(LoadError):
    pass


@runtime_checkable
class ModelBehavior(Protocol):
    """Contract the engine calls on every agent model.

    init(agent_state, params, rng)      — params come pre-merged with
                                          manifest defaults; rng is the
                                          agent's private stream.
    step(dt, view, agent_state, emit)   — advance one step; may mutate only
                                          its own agent; a truthy return
                                          requests run termination.
    on_set_param(agent_state, key_path, value) -> bool
                                        — mid-run change, applied at a step
                                          boundary; False means rejected.
    """

    def init(self, agent, params: dict, rng) -> None: ...

    def step(self, dt: float, view, agent, emit) -> object: ...

    def on_set_param(self, agent, key_path: str, value) -> bool: ...


class ModelRegistry:
    """Name@version index of manifests and behavior factories."""

    def __init__(self):
        self._manifests: dict[tuple[str, str], ModelManifest] = {}
        self._factories: dict[tuple[str, str], Callable[[], object]] = {}
        self._builtin: set[str] = set()
        self._ext_dirs: list[Path] = []

    def add(self, manifest: ModelManifest, factory: Callable[[], object], builtin: bool = False) -> None:
        key = (manifest.name, manifest.version)
        if key in self._manifests:
            raise DuplicateModel(f"model {manifest.ref} already registered")
        if not builtin and manifest.name in self._builtin:
            raise DuplicateModel(f"built-in model name {manifest.name!r} cannot be shadowed")
        manifest.check()
        self._manifests[key] = manifest
        self._factories[key] = factory
        if builtin:
            self._builtin.add(manifest.name)

    def manifests(self) -> list[ModelManifest]:
        return [self._manifests[k] for k in sorted(self._manifests)]

    def get_manifest(self, name: str, version: str) -> ModelManifest:
        key = (name, version)
        if key not in self._manifests:
            raise LoadError(f"unknown model {name}@{version}")
        return self._manifests[key]

    def has(self, name: str, version: str) -> bool:
        return (name, version) in self._manifests

    def create(self, name: str, version: str):
        key = (name, version)
        if key not in self._factories:
            raise LoadError(f"unknown model {name}@{version}")
        return self._factories[key]()

    # --- extensions ---------------------------------------------------------

    def load_extension(self, artifact_path: str | Path, manifest_path: str | Path) -> ModelManifest:
        """Register one extension model from its code + manifest pair."""
        try:
            manifest = ModelManifest.load(manifest_path)
        except ManifestError as exc:
            raise ManifestInvalid(str(exc)) from None

        artifact_path = Path(artifact_path)
        module_name = f"asa_ext_{artifact_path.stem}_{abs(hash(str(artifact_path))) & 0xFFFFFF:x}"
        try:
            spec = importlib.util.spec_from_file_location(module_name, artifact_path)
            if spec is None or spec.loader is None:
                raise ArtifactUnloadable(f"cannot load {artifact_path}")
            module = importlib.util.module_from_spec(spec)
            sys.modules[module_name] = module
            spec.loader.exec_module(module)
        except LoadError:
            raise
        except Exception as exc:
            raise ArtifactUnloadable(f"cannot load {artifact_path}: {exc}") from None

        behaviors = getattr(module, "BEHAVIORS", None)
        if not isinstance(behaviors, dict) or manifest.name not in behaviors:
            raise ArtifactUnloadable(f"{artifact_path} does not expose BEHAVIORS[{manifest.name!r}]")
        self.add(manifest, behaviors[manifest.name])
        return manifest

    def load_extension_dir(self, ext_dir: str | Path) -> list[ModelManifest]:
        """Scan a directory: each model is <stem>.json + <stem>.py."""
        ext_dir = Path(ext_dir)
        loaded = []
        for manifest_path in sorted(ext_dir.glob("*.json")):
            artifact = manifest_path.with_suffix(".py")
            if not artifact.exists():
                raise ArtifactUnloadable(f"{manifest_path} has no matching {artifact.name}")
            loaded.append(self.load_extension(artifact, manifest_path))
        if ext_dir not in self._ext_dirs:
            self._ext_dirs.append(ext_dir)
        return loaded

    def reload_extensions(self) -> list[ModelManifest]:
        """Re-scan the known extension dirs, picking up newly added models."""
        loaded = []
        for ext_dir in list(self._ext_dirs):
            for manifest_path in sorted(Path(ext_dir).glob("*.json")):
                try:
                    doc = ModelManifest.load(manifest_path)
                except ManifestError as exc:
                    raise ManifestInvalid(str(exc)) from None
                if not self.has(doc.name, doc.version):
                    loaded.append(self.load_extension(manifest_path.with_suffix(".py"), manifest_path))
        return loaded


def register_extension(
    artifact_path: str | Path, manifest_path: str | Path, registry: ModelRegistry
) -> ModelManifest:
    return registry.load_extension(artifact_path, manifest_path)


def builtin_registry(ext_dirs: Iterable[str | Path] = ()) -> ModelRegistry:
    """Registry preloaded with the built-in models, plus any extension dirs."""
    from .models import RangeSensor, WaypointPlatform, WezWeapon

    registry = ModelRegistry()
    registry.add(WaypointPlatform.manifest, WaypointPlatform, builtin=True)
    registry.add(RangeSensor.manifest, RangeSensor, builtin=True)
    registry.add(WezWeapon.manifest, WezWeapon, builtin=True)
    for d in ext_dirs:
        registry.load_extension_dir(d)
    return registry
