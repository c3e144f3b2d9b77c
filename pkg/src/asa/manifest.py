"""Model manifests: the JSON-described contract of a loadable agent model.

A manifest names the model, its version, the parameters it accepts (with
types, defaults, and bounds), which component models may be mounted on it,
and the record tags it emits with their payload keys. Scenario validation
and the engine's record emitter both enforce against it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

PARAM_TYPES = ("number", "text", "boolean", "list", "tree")

# Record tags the engine emits on every agent's behalf; models may not claim them.
RESERVED_TAGS = ("status", "position", "param_rejected")


class ManifestError(Exception):
    """Manifest fails its structural invariants."""


@dataclass(frozen=True)
class ParamSpec:
    key: str
    type: str
    required: bool = False
    default: object = None
    bounds: tuple[float, float] | None = None


@dataclass(frozen=True)
class TagSpec:
    tag: str
    keys: tuple[str, ...] = ()


@dataclass(frozen=True)
class ModelManifest:
    name: str
    version: str
    params: tuple[ParamSpec, ...] = ()
    accepted_components: tuple[str, ...] = ()
    emitted_tags: tuple[TagSpec, ...] = ()

    @property
    def ref(self) -> str:
        return f"{self.name}@{self.version}"

    def param(self, key: str) -> ParamSpec | None:
        for p in self.params:
            if p.key == key:
                return p
        return None

    def tag_keys(self, tag: str) -> tuple[str, ...] | None:
        for t in self.emitted_tags:
            if t.tag == tag:
                return t.keys
        return None

    def check(self) -> None:
        """Raise ManifestError on any invariant violation."""
        if not self.name:
            raise ManifestError("manifest name must be non-empty")
        if not self.version:
            raise ManifestError("manifest version must be non-empty")
        seen: set[str] = set()
        for p in self.params:
            if p.key in seen:
                raise ManifestError(f"duplicate param key {p.key!r}")
            seen.add(p.key)
            if p.type not in PARAM_TYPES:
                raise ManifestError(f"param {p.key!r} has unknown type {p.type!r}")
            if p.required and p.default is not None:
                raise ManifestError(f"required param {p.key!r} must not carry a default")
            if p.bounds is not None:
                if p.type != "number":
                    raise ManifestError(f"param {p.key!r}: bounds apply only to numbers")
                lo, hi = p.bounds
                if not lo < hi:
                    raise ManifestError(f"param {p.key!r}: bounds must satisfy lo < hi")
        tags: set[str] = set()
        for t in self.emitted_tags:
            if t.tag in tags:
                raise ManifestError(f"duplicate emitted tag {t.tag!r}")
            tags.add(t.tag)
            if t.tag in RESERVED_TAGS:
                raise ManifestError(f"tag {t.tag!r} is reserved for the engine")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "params": [
                {
                    "key": p.key,
                    "type": p.type,
                    "required": p.required,
                    **({"default": p.default} if p.default is not None else {}),
                    **({"bounds": list(p.bounds)} if p.bounds is not None else {}),
                }
                for p in self.params
            ],
            "accepted_components": list(self.accepted_components),
            "emitted_tags": [{"tag": t.tag, "keys": list(t.keys)} for t in self.emitted_tags],
        }

    @staticmethod
    def from_json(doc: dict) -> "ModelManifest":
        try:
            params = []
            for p in doc.get("params", []):
                bounds = p.get("bounds")
                params.append(
                    ParamSpec(
                        key=p["key"],
                        type=p["type"],
                        required=bool(p.get("required", False)),
                        default=p.get("default"),
                        bounds=(float(bounds[0]), float(bounds[1])) if bounds is not None else None,
                    )
                )
            tags = [TagSpec(t["tag"], tuple(t.get("keys", []))) for t in doc.get("emitted_tags", [])]
            manifest = ModelManifest(
                name=doc["name"],
                version=doc["version"],
                params=tuple(params),
                accepted_components=tuple(doc.get("accepted_components", [])),
                emitted_tags=tuple(tags),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ManifestError(f"malformed manifest: {exc!r}") from None
        manifest.check()
        return manifest

    @staticmethod
    def load(path: str | Path) -> "ModelManifest":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from None
        return ModelManifest.from_json(doc)
