"""Scenario data model, templating, batch expansion, and experiment designs.

A scenario is a declarative JSON document: a time base, a seed, and a tree
of agents with models, parameters, and mounted components. Templates mark
selected parameter leaves as placeholders; a binding set supplies one value
per placeholder; expanding a template over a list of binding sets yields
the execution requests that get scheduled onto nodes, each with its own
derived seed.

Dotted path grammar for placeholders and mid-run parameter changes:

    agents.<agent_id>(.components.<agent_id>)*.params.<key>(.<key>)*

Agent ids therefore must not contain dots (spawned sub-agents such as
missiles use the reserved "<parent>.m<k>" form and never appear in paths).
"""

from __future__ import annotations

import copy
import itertools
import uuid
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .jsonutil import canonical_dumps
from .manifest import ModelManifest
from .rng import SplitMix64, derive_seed

SIDES = ("BLUE", "RED", "NEUTRAL")
MAX_COMPONENT_DEPTH = 3
_MAX_U64 = (1 << 64) - 1

BindingSet = Mapping[str, Any]


class ScenarioError(Exception):
    """Base class for scenario-layer failures."""


class FormatError(ScenarioError):
    """Document does not have the structural shape of its schema."""


class PathError(ScenarioError):
    """Dotted path does not parse."""


class ResolveError(ScenarioError):
    def __init__(self, code: str, name: str, detail: str = ""):
        super().__init__(f"{code}: {name}" + (f" ({detail})" if detail else ""))
        self.code = code
        self.name = name


class MissingBinding(ResolveError):
    def __init__(self, name: str):
        super().__init__("missing_binding", name)


class UnknownBinding(ResolveError):
    def __init__(self, name: str):
        super().__init__("unknown_binding", name)


class OutOfBounds(ResolveError):
    def __init__(self, name: str, detail: str = ""):
        super().__init__("out_of_bounds", name, detail)


class BadBindingValue(ResolveError):
    def __init__(self, name: str, detail: str = ""):
        super().__init__("bad_binding_value", name, detail)


class PathVanished(ResolveError):
    def __init__(self, path: str):
        super().__init__("path_vanished", path)


class BatchExpandError(ScenarioError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"binding {index}: {cause}")
        self.index = index
        self.cause = cause


class EmptyFactor(ScenarioError):
    def __init__(self, name: str):
        super().__init__(f"factor {name!r} has no values")
        self.name = name


class BadRange(ScenarioError):
    def __init__(self, name: str):
        super().__init__(f"range for {name!r} must satisfy lo < hi")
        self.name = name


@dataclass(frozen=True)
class ValidationError:
    code: str
    path: str
    detail: str

    def to_json(self) -> dict:
        return {"code": self.code, "path": self.path, "detail": self.detail}


# --- data model --------------------------------------------------------------


@dataclass
class SimBlock:
    step_dt: float
    max_steps: int
    seed: int


@dataclass
class AgentSpec:
    agent_id: str
    side: str
    model_name: str
    model_version: str
    params: dict = field(default_factory=dict)
    components: list["AgentSpec"] = field(default_factory=list)


@dataclass
class ScenarioSpec:
    name: str
    description: str
    sim: SimBlock
    agents: list[AgentSpec] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "sim": {"step_dt": self.sim.step_dt, "max_steps": self.sim.max_steps, "seed": self.sim.seed},
            "agents": [_agent_to_json(a) for a in self.agents],
        }

    @staticmethod
    def from_json(doc: Any) -> "ScenarioSpec":
        return scenario_from_json(doc)

    def canonical(self) -> str:
        return canonical_dumps(self.to_json())

    def agent_ids(self) -> list[str]:
        out: list[str] = []

        def walk(agents: Iterable[AgentSpec]):
            for a in agents:
                out.append(a.agent_id)
                walk(a.components)

        walk(self.agents)
        return out


def _agent_to_json(a: AgentSpec) -> dict:
    return {
        "agent_id": a.agent_id,
        "side": a.side,
        "model": {"name": a.model_name, "version": a.model_version},
        "params": copy.deepcopy(a.params),
        "components": [_agent_to_json(c) for c in a.components],
    }


def _agent_from_json(doc: Any, where: str) -> AgentSpec:
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: agent must be an object")
    for key in ("agent_id", "side", "model"):
        if key not in doc:
            raise FormatError(f"{where}: agent missing '{key}'")
    model = doc["model"]
    if not isinstance(model, dict) or "name" not in model or "version" not in model:
        raise FormatError(f"{where}: model must carry name and version")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise FormatError(f"{where}: params must be an object")
    comps = doc.get("components", [])
    if not isinstance(comps, list):
        raise FormatError(f"{where}: components must be a list")
    extra = set(doc) - {"agent_id", "side", "model", "params", "components"}
    if extra:
        raise FormatError(f"{where}: unknown agent fields {sorted(extra)}")
    return AgentSpec(
        agent_id=str(doc["agent_id"]),
        side=str(doc["side"]),
        model_name=str(model["name"]),
        model_version=str(model["version"]),
        params=copy.deepcopy(params),
        components=[_agent_from_json(c, f"{where}.components[{i}]") for i, c in enumerate(comps)],
    )


def scenario_from_json(doc: Any) -> ScenarioSpec:
    if not isinstance(doc, dict):
        raise FormatError("scenario must be an object")
    extra = set(doc) - {"name", "description", "sim", "agents"}
    if extra:
        raise FormatError(f"unknown scenario fields {sorted(extra)}")
    sim = doc.get("sim")
    if not isinstance(sim, dict):
        raise FormatError("scenario missing sim block")
    for key in ("step_dt", "max_steps", "seed"):
        if key not in sim:
            raise FormatError(f"sim block missing '{key}'")
    agents = doc.get("agents", [])
    if not isinstance(agents, list):
        raise FormatError("agents must be a list")
    return ScenarioSpec(
        name=str(doc.get("name", "")),
        description=str(doc.get("description", "")),
        sim=SimBlock(step_dt=sim["step_dt"], max_steps=sim["max_steps"], seed=sim["seed"]),
        agents=[_agent_from_json(a, f"agents[{i}]") for i, a in enumerate(agents)],
    )


@dataclass(frozen=True)
class Placeholder:
    name: str
    path: str
    kind: str  # "number" | "text"
    bounds: tuple[float, float] | None = None


@dataclass
class ScenarioTemplate:
    base: ScenarioSpec
    placeholders: list[Placeholder] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "base": self.base.to_json(),
            "placeholders": [
                {
                    "name": p.name,
                    "path": p.path,
                    "kind": p.kind,
                    **({"bounds": list(p.bounds)} if p.bounds is not None else {}),
                }
                for p in self.placeholders
            ],
        }

    @staticmethod
    def from_json(doc: Any) -> "ScenarioTemplate":
        if not isinstance(doc, dict) or "base" not in doc:
            raise FormatError("template must be an object with a base scenario")
        extra = set(doc) - {"base", "placeholders"}
        if extra:
            raise FormatError(f"unknown template fields {sorted(extra)}")
        phs = []
        for i, p in enumerate(doc.get("placeholders", [])):
            if not isinstance(p, dict) or not {"name", "path", "kind"} <= set(p):
                raise FormatError(f"placeholders[{i}] must carry name, path, kind")
            bounds = p.get("bounds")
            if bounds is not None:
                if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
                    raise FormatError(f"placeholders[{i}] bounds must be [lo, hi]")
                bounds = (float(bounds[0]), float(bounds[1]))
            phs.append(Placeholder(str(p["name"]), str(p["path"]), str(p["kind"]), bounds))
        return ScenarioTemplate(base=scenario_from_json(doc["base"]), placeholders=phs)


@dataclass
class ExecutionRequest:
    request_id: str
    scenario: ScenarioSpec
    seed: int
    batch_id: str
    index: int

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "scenario": self.scenario.to_json(),
            "seed": self.seed,
            "origin": {"batch_id": self.batch_id, "index": self.index},
        }

    @staticmethod
    def from_json(doc: Any) -> "ExecutionRequest":
        if not isinstance(doc, dict):
            raise FormatError("execution request must be an object")
        try:
            origin = doc["origin"]
            return ExecutionRequest(
                request_id=str(doc["request_id"]),
                scenario=scenario_from_json(doc["scenario"]),
                seed=int(doc["seed"]),
                batch_id=str(origin["batch_id"]),
                index=int(origin["index"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed execution request: {exc!r}") from None


# --- dotted paths -------------------------------------------------------------


def parse_param_path(path: str) -> tuple[list[str], list[str]]:
    """Split a dotted path into (agent id chain, param key chain)."""
    parts = path.split(".")
    if len(parts) < 4 or parts[0] != "agents":
        raise PathError(f"path must start with agents.<id>...: {path!r}")
    chain = [parts[1]]
    i = 2
    while i < len(parts) and parts[i] == "components":
        if i + 1 >= len(parts):
            raise PathError(f"dangling 'components' in {path!r}")
        chain.append(parts[i + 1])
        i += 2
    if i >= len(parts) or parts[i] != "params":
        raise PathError(f"expected 'params' segment in {path!r}")
    keys = parts[i + 1 :]
    if not keys or any(not k for k in keys):
        raise PathError(f"path must address at least one param key: {path!r}")
    if any(not c for c in chain):
        raise PathError(f"empty agent id in {path!r}")
    return chain, keys


def _find_agent(agents: list[AgentSpec], chain: list[str]) -> AgentSpec | None:
    pool = agents
    found = None
    for aid in chain:
        found = next((a for a in pool if a.agent_id == aid), None)
        if found is None:
            return None
        pool = found.components
    return found


def get_param_leaf(spec: ScenarioSpec, path: str) -> Any:
    """Value at a dotted path; raises PathError if it does not resolve."""
    chain, keys = parse_param_path(path)
    agent = _find_agent(spec.agents, chain)
    if agent is None:
        raise PathError(f"no agent {'.'.join(chain)!r} for {path!r}")
    node: Any = agent.params
    for k in keys:
        if not isinstance(node, dict) or k not in node:
            raise PathError(f"param leaf missing for {path!r}")
        node = node[k]
    return node


def set_param_leaf(spec: ScenarioSpec, path: str, value: Any) -> None:
    """Replace the leaf at ``path`` in place; raises PathError if absent."""
    chain, keys = parse_param_path(path)
    agent = _find_agent(spec.agents, chain)
    if agent is None:
        raise PathError(f"no agent {'.'.join(chain)!r} for {path!r}")
    node: Any = agent.params
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise PathError(f"param leaf missing for {path!r}")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise PathError(f"param leaf missing for {path!r}")
    node[keys[-1]] = value


# --- validation ---------------------------------------------------------------


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_param_value(p, value, where: str, errors: list[ValidationError]) -> None:
    kind = p.type
    ok = (
        (kind == "number" and _is_number(value))
        or (kind == "text" and isinstance(value, str))
        or (kind == "boolean" and isinstance(value, bool))
        or (kind == "list" and isinstance(value, list))
        or (kind == "tree" and isinstance(value, dict))
    )
    if not ok:
        errors.append(ValidationError("bad_param_type", f"{where}.{p.key}", f"expected {kind}"))
        return
    if p.bounds is not None and _is_number(value):
        lo, hi = p.bounds
        if not (lo <= value <= hi):
            errors.append(
                ValidationError("param_out_of_bounds", f"{where}.{p.key}", f"{value} outside [{lo}, {hi}]")
            )


def validate(spec: ScenarioSpec, registry: Iterable[ModelManifest]) -> list[ValidationError]:
    """Collect every rule violation in the scenario; empty list means valid."""
    errors: list[ValidationError] = []
    manifests = {(m.name, m.version): m for m in registry}

    if not _is_number(spec.sim.step_dt) or spec.sim.step_dt <= 0:
        errors.append(ValidationError("bad_sim", "sim.step_dt", "step_dt must be > 0"))
    if not isinstance(spec.sim.max_steps, int) or isinstance(spec.sim.max_steps, bool) or spec.sim.max_steps < 1:
        errors.append(ValidationError("bad_sim", "sim.max_steps", "max_steps must be >= 1"))
    if not isinstance(spec.sim.seed, int) or isinstance(spec.sim.seed, bool) or not (0 <= spec.sim.seed <= _MAX_U64):
        errors.append(ValidationError("bad_sim", "sim.seed", "seed must be an unsigned 64-bit integer"))

    seen: dict[str, str] = {}

    def walk(agent: AgentSpec, where: str, depth: int, parent: ModelManifest | None):
        if not agent.agent_id:
            errors.append(ValidationError("bad_agent_id", where, "agent_id must be non-empty"))
        elif "." in agent.agent_id:
            errors.append(
                ValidationError("bad_agent_id", where, "agent_id must not contain '.' (reserved for spawned agents)")
            )
        if agent.agent_id in seen:
            errors.append(
                ValidationError("duplicate_agent_id", where, f"{agent.agent_id!r} already used at {seen[agent.agent_id]}")
            )
        else:
            seen[agent.agent_id] = where
        if agent.side not in SIDES:
            errors.append(ValidationError("bad_side", where, f"side must be one of {SIDES}"))
        if depth > MAX_COMPONENT_DEPTH:
            errors.append(ValidationError("nesting_too_deep", where, f"component depth limit is {MAX_COMPONENT_DEPTH}"))

        manifest = manifests.get((agent.model_name, agent.model_version))
        if manifest is None:
            errors.append(
                ValidationError("unknown_model", where, f"{agent.model_name}@{agent.model_version} not in registry")
            )
        else:
            if parent is not None and agent.model_name not in parent.accepted_components:
                errors.append(
                    ValidationError("component_not_accepted", where, f"{parent.name} does not accept {agent.model_name}")
                )
            declared = {p.key for p in manifest.params}
            for key in agent.params:
                if key not in declared:
                    errors.append(ValidationError("unknown_param", f"{where}.params.{key}", "not in model manifest"))
            for p in manifest.params:
                if p.key in agent.params:
                    _check_param_value(p, agent.params[p.key], f"{where}.params", errors)
                elif p.required:
                    errors.append(ValidationError("missing_param", f"{where}.params.{p.key}", "required param absent"))
        for comp in agent.components:
            walk(comp, f"{where}.components.{comp.agent_id}", depth + 1, manifest)

    for agent in spec.agents:
        walk(agent, f"agents.{agent.agent_id}", 1, None)
    return errors


def validate_template(template: ScenarioTemplate) -> list[ValidationError]:
    """Template-local rules: unique names, resolvable paths, sane bounds."""
    errors: list[ValidationError] = []
    names: set[str] = set()
    for p in template.placeholders:
        where = f"placeholders.{p.name}"
        if p.name in names:
            errors.append(ValidationError("duplicate_placeholder", where, "name already declared"))
        names.add(p.name)
        if p.kind not in ("number", "text"):
            errors.append(ValidationError("bad_placeholder_kind", where, "kind must be number or text"))
        if p.bounds is not None:
            lo, hi = p.bounds
            if p.kind != "number":
                errors.append(ValidationError("bad_bounds", where, "bounds apply only to kind=number"))
            elif not lo < hi:
                errors.append(ValidationError("bad_bounds", where, "bounds must satisfy lo < hi"))
        try:
            leaf = get_param_leaf(template.base, p.path)
        except (PathError, ScenarioError) as exc:
            errors.append(ValidationError("bad_path", where, str(exc)))
            continue
        if isinstance(leaf, (dict, list)):
            errors.append(ValidationError("bad_path", where, "path must address a scalar leaf"))
    return errors


# --- resolution and batch expansion -------------------------------------------


def resolve(template: ScenarioTemplate, binding: BindingSet) -> ScenarioSpec:
    """Apply one binding set to the template's base scenario.

    Replaces exactly the placeholder leaves; everything else round-trips
    byte-identically under canonical serialization.
    """
    declared = {p.name for p in template.placeholders}
    for name in binding:
        if name not in declared:
            raise UnknownBinding(name)
    resolved = scenario_from_json(template.base.to_json())
    for p in template.placeholders:
        if p.name not in binding:
            raise MissingBinding(p.name)
        value = binding[p.name]
        if p.kind == "number" and not _is_number(value):
            raise BadBindingValue(p.name, "expected a number")
        if p.kind == "text" and not isinstance(value, str):
            raise BadBindingValue(p.name, "expected text")
        if p.bounds is not None:
            lo, hi = p.bounds
            if not (lo <= value <= hi):
                raise OutOfBounds(p.name, f"{value} outside [{lo}, {hi}]")
        try:
            set_param_leaf(resolved, p.path, value)
        except PathError:
            raise PathVanished(p.path) from None
    return resolved


def expand_batch(
    template: ScenarioTemplate,
    bindings: Sequence[BindingSet],
    batch_seed: int,
    batch_id: str | None = None,
) -> list[ExecutionRequest]:
    """One execution request per binding set, in order, with derived seeds."""
    if batch_id is None:
        batch_id = uuid.uuid4().hex[:12]
    requests: list[ExecutionRequest] = []
    for i, binding in enumerate(bindings):
        try:
            scenario = resolve(template, binding)
        except ScenarioError as exc:
            raise BatchExpandError(i, exc) from exc
        requests.append(
            ExecutionRequest(
                request_id=f"{batch_id}-{i}",
                scenario=scenario,
                seed=derive_seed(batch_seed, i),
                batch_id=batch_id,
                index=i,
            )
        )
    return requests


# --- experiment designs ---------------------------------------------------------


def full_factorial(factors: Mapping[str, Sequence[Any]]) -> list[dict]:
    """Cartesian product of the factor lists, last factor varying fastest."""
    for name, values in factors.items():
        if len(values) == 0:
            raise EmptyFactor(name)
    names = list(factors)
    out = []
    for combo in itertools.product(*(factors[n] for n in names)):
        out.append(dict(zip(names, combo)))
    return out


def latin_hypercube(n: int, ranges: Mapping[str, Sequence[float]], seed: int) -> list[dict]:
    """n stratified samples per dimension, one per stratum, deterministically.

    For each dimension in declaration order: draw a Fisher-Yates permutation
    of the n strata, then one uniform offset per sample, all from a single
    SplitMix64 stream seeded by ``seed``. Sample i lands uniformly inside
    stratum perm[i] of [lo, hi).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    for name, rng_pair in ranges.items():
        lo, hi = rng_pair
        if not lo < hi:
            raise BadRange(name)
    stream = SplitMix64(seed)
    columns: dict[str, list[float]] = {}
    for name, (lo, hi) in ranges.items():
        width = (hi - lo) / n
        perm = list(range(n))
        stream.shuffle(perm)
        columns[name] = [lo + (perm[i] + stream.next_float()) * width for i in range(n)]
    return [{name: columns[name][i] for name in ranges} for i in range(n)]
