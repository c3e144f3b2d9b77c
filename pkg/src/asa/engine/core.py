"""Run loop, world state, perception, and record emission.

Execution model: all agents advance once per step in ascending agent_id
order, then engagements resolve, then the engine emits per-agent "status"
and "position" records. Control commands apply only at step boundaries, so
a paused run emits nothing and resumes bit-identically. Records for one
step are sorted by (agent_id, tag) before they reach the sink; a record is
a plain dict with exactly the keys run_id/step/sim_time/tag/agent_id/payload.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from ..manifest import ModelManifest
from ..rng import SplitMix64, agent_stream_seed
from ..scenario import ScenarioSpec, parse_param_path
from .registry import ModelRegistry

TWO_PI = 2.0 * math.pi

OUTCOME_COMPLETED = "COMPLETED"
OUTCOME_STOPPED = "STOPPED"
OUTCOME_FAILED = "FAILED"

# Incremented once per run_simulation call; replay tests assert it stays flat.
_RUN_INVOCATIONS = 0


def run_invocations() -> int:
    return _RUN_INVOCATIONS


class EngineError(Exception):
    pass


class RecordContractError(EngineError):
    """A model emitted a record outside its manifest contract."""


@dataclass
class RunOutcome:
    state: str
    reason: str = ""
    steps: int = 0

    @property
    def completed(self) -> bool:
        return self.state == OUTCOME_COMPLETED


@dataclass
class SimClock:
    step: int = 0
    step_dt: float = 0.1

    @property
    def sim_time(self) -> float:
        # derived, never accumulated: no float drift across a million steps
        return self.step * self.step_dt

    def advance(self) -> None:
        self.step += 1


@dataclass
class AgentState:
    """Public kinematic state of one world entity.

    kind is structural: "platform" for top-level scenario agents,
    "component" for mounted ones (position slaved to the carrier), and
    "missile" for weapon-spawned agents. Behaviors may mutate only their
    own AgentState.
    """

    agent_id: str
    side: str
    kind: str = "platform"
    alive: bool = True
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    speed: float = 0.0
    heading: float = 0.0
    carrier_id: str | None = None
    detections: dict[str, int] = field(default_factory=dict)

    def pos(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


def dist3(a: AgentState, b: AgentState) -> float:
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


def opposing(side_a: str, side_b: str) -> bool:
    return side_a != side_b and "NEUTRAL" not in (side_a, side_b)


class World:
    """Mutable run state: clock plus every agent, living or dead."""

    def __init__(self, run_id: str, run_seed: int, step_dt: float):
        self.run_id = run_id
        self.run_seed = run_seed
        self.clock = SimClock(0, step_dt)
        self.agents: dict[str, AgentState] = {}
        self.behaviors: dict[str, Any] = {}
        self.rngs: dict[str, SplitMix64] = {}
        self._spawns: list[tuple[str, AgentState, Any]] = []

    def add_agent(self, state: AgentState, behavior, rng: SplitMix64) -> None:
        if state.agent_id in self.agents:
            raise EngineError(f"agent id {state.agent_id!r} already in world")
        self.agents[state.agent_id] = state
        self.behaviors[state.agent_id] = behavior
        self.rngs[state.agent_id] = rng
        if hasattr(behavior, "bind_world"):
            behavior.bind_world(self)

    def request_spawn(self, state: AgentState, behavior) -> None:
        """Queue a new agent; it joins the world at the end of the current advance pass."""
        self._spawns.append((state.agent_id, state, behavior))

    def flush_spawns(self) -> list[str]:
        spawned = []
        for agent_id, state, behavior in self._spawns:
            self.add_agent(state, behavior, SplitMix64(agent_stream_seed(self.run_seed, agent_id)))
            spawned.append(agent_id)
        self._spawns.clear()
        return spawned

    def sorted_ids(self) -> list[str]:
        return sorted(self.agents)


class PerceptionView:
    """Read-only window onto the world handed to model behaviors.

    Dead agents are invisible to every query here; they remain in the
    world only so their records and identities persist.
    """

    def __init__(self, world: World):
        self._world = world

    @property
    def step(self) -> int:
        return self._world.clock.step

    @property
    def sim_time(self) -> float:
        return self._world.clock.sim_time

    def agent(self, agent_id: str) -> AgentState | None:
        a = self._world.agents.get(agent_id)
        return a if a is not None and a.alive else None

    def carrier(self, agent: AgentState) -> AgentState | None:
        if agent.carrier_id is None:
            return agent
        return self._world.agents.get(agent.carrier_id)

    def opposing_platforms(self, side: str) -> list[AgentState]:
        """Alive top-level platforms of an opposing side, ascending agent_id.

        Missiles and components are not detectable targets.
        """
        out = [
            a
            for a in self._world.agents.values()
            if a.alive and a.kind == "platform" and opposing(side, a.side)
        ]
        out.sort(key=lambda a: a.agent_id)
        return out


class _StepEmitter:
    """Collects one step's records and enforces the per-step key contract."""

    def __init__(self, run_id: str, step: int, sim_time: float):
        self.run_id = run_id
        self.step = step
        self.sim_time = sim_time
        self._records: list[dict] = []
        self._keys: set[tuple[str, str]] = set()

    def emit(self, agent_id: str, tag: str, payload: dict, manifest: ModelManifest | None) -> None:
        if manifest is not None:
            declared = manifest.tag_keys(tag)
            if declared is None:
                raise RecordContractError(f"model {manifest.ref} does not declare tag {tag!r}")
            extra = set(payload) - set(declared)
            if extra:
                raise RecordContractError(f"tag {tag!r} payload keys {sorted(extra)} not in manifest {manifest.ref}")
        for key, value in payload.items():
            if not isinstance(value, (int, float, str, bool)):
                raise RecordContractError(f"payload {key!r} of tag {tag!r} is not a scalar")
        key = (agent_id, tag)
        if key in self._keys:
            if tag == "param_rejected":  # at most one per agent per step is kept
                return
            raise RecordContractError(f"duplicate record ({agent_id}, {tag}) within step {self.step}")
        self._keys.add(key)
        self._records.append(
            {
                "run_id": self.run_id,
                "step": self.step,
                "sim_time": self.sim_time,
                "tag": tag,
                "agent_id": agent_id,
                "payload": payload,
            }
        )

    def finish(self) -> list[dict]:
        self._records.sort(key=lambda r: (r["agent_id"], r["tag"]))
        return self._records


def _build_world(
    spec: ScenarioSpec, registry: ModelRegistry, run_id: str, run_seed: int
) -> World:
    world = World(run_id, run_seed, spec.sim.step_dt)
    entries: list[tuple[str, str, str, str, str, dict, str | None]] = []

    def collect(agent_spec, kind: str, carrier: str | None):
        entries.append(
            (
                agent_spec.agent_id,
                agent_spec.side,
                kind,
                agent_spec.model_name,
                agent_spec.model_version,
                agent_spec.params,
                carrier,
            )
        )
        top = agent_spec.agent_id if carrier is None else carrier
        for comp in agent_spec.components:
            collect(comp, "component", top)

    for a in spec.agents:
        collect(a, "platform", None)

    # init in ascending id order so extension init-time draws are order-free
    for agent_id, side, kind, mname, mver, params, carrier in sorted(entries):
        manifest = registry.get_manifest(mname, mver)
        behavior = registry.create(mname, mver)
        state = AgentState(agent_id=agent_id, side=side, kind=kind, carrier_id=carrier)
        rng = SplitMix64(agent_stream_seed(run_seed, agent_id))
        merged = {p.key: p.default for p in manifest.params if p.default is not None}
        merged.update(params)
        world.add_agent(state, behavior, rng)
        behavior.init(state, merged, rng)
    return world


def _sync_components(world: World) -> None:
    for agent in world.agents.values():
        if agent.kind != "component" or agent.carrier_id is None:
            continue
        carrier = world.agents.get(agent.carrier_id)
        if carrier is None:
            continue
        agent.x, agent.y, agent.z = carrier.x, carrier.y, carrier.z
        agent.speed = carrier.speed
        agent.heading = carrier.heading
        if not carrier.alive:
            agent.alive = False


def _resolve_engagements(world: World, emitter: _StepEmitter) -> None:
    from .models import MissilePursuit  # local import: models depends on core types

    for mid in world.sorted_ids():
        missile = world.agents[mid]
        if missile.kind != "missile" or not missile.alive:
            continue
        behavior = world.behaviors[mid]
        assert isinstance(behavior, MissilePursuit)
        target = world.agents.get(behavior.target_id)
        if target is None or not target.alive:
            missile.alive = False
            emitter.emit(mid, "miss", {"target_id": behavior.target_id, "reason": "target_lost"}, behavior.manifest)
            continue
        if dist3(missile, target) < behavior.hit_radius_m:
            target.alive = False
            missile.alive = False
            emitter.emit(mid, "hit", {"target_id": behavior.target_id}, behavior.manifest)
            continue
        if (world.clock.step - behavior.launch_step) * world.clock.step_dt >= behavior.max_flight_s:
            missile.alive = False
            emitter.emit(mid, "miss", {"target_id": behavior.target_id, "reason": "timeout"}, behavior.manifest)


def _emit_engine_records(world: World, emitter: _StepEmitter) -> None:
    for aid in world.sorted_ids():
        agent = world.agents[aid]
        emitter.emit(aid, "status", {"alive": agent.alive, "side": agent.side}, None)
        if agent.alive and agent.kind in ("platform", "missile"):
            emitter.emit(
                aid,
                "position",
                {
                    "x": agent.x,
                    "y": agent.y,
                    "z": agent.z,
                    "heading": agent.heading,
                    "speed": agent.speed,
                },
                None,
            )


def _apply_set_param(world: World, emitter: _StepEmitter, agent_path: str, value: Any) -> None:
    try:
        chain, keys = parse_param_path(agent_path)
    except Exception:
        chain, keys = None, None
    target_id = chain[-1] if chain else None
    behavior = world.behaviors.get(target_id) if target_id else None
    accepted = False
    if behavior is not None and keys:
        try:
            accepted = bool(behavior.on_set_param(world.agents[target_id], ".".join(keys), value))
        except Exception:
            accepted = False
    if not accepted and target_id in world.agents:
        # rejections attach to the addressed agent; a path that names no
        # world agent has nowhere to attach and is dropped silently
        emitter.emit(target_id, "param_rejected", {"path": agent_path}, None)


def run_simulation(
    spec: ScenarioSpec,
    registry: ModelRegistry,
    sink: Callable[[list[dict]], None],
    control: Callable[[], Iterable] | None = None,
    pacer: Callable[[int], None] | None = None,
    run_id: str = "run",
    seed: int | None = None,
) -> RunOutcome:
    """Execute one scenario to completion, streaming records per step.

    ``sink`` receives the (agent_id, tag)-sorted record list after every
    step including step 0 (initial state). ``control`` is polled at step
    boundaries and may yield ControlCommand values; ``pacer`` is called
    before each advance and is where wall-clock throttling lives.
    Returns COMPLETED, STOPPED, or FAILED — never raises for model or
    sink failures.
    """
    global _RUN_INVOCATIONS
    _RUN_INVOCATIONS += 1

    run_seed = spec.sim.seed if seed is None else seed
    try:
        world = _build_world(spec, registry, run_id, run_seed)
    except Exception as exc:
        return RunOutcome(OUTCOME_FAILED, f"world build failed: {exc}", 0)

    view = PerceptionView(world)
    max_steps = spec.sim.max_steps
    dt = spec.sim.step_dt
    paused = False
    stop_requested = False
    terminate_reason: str | None = None
    pending_params: list[tuple[str, Any]] = []

    def poll_control() -> None:
        nonlocal paused, stop_requested
        if control is None:
            return
        for cmd in control() or ():
            kind = getattr(cmd, "kind", None)
            if kind == "pause":
                paused = True
            elif kind == "resume":
                paused = False
            elif kind == "stop":
                stop_requested = True
            elif kind == "set_speed" and pacer is not None and hasattr(pacer, "set_factor"):
                pacer.set_factor(cmd.factor)
            elif kind == "set_param":
                pending_params.append((cmd.param_path, cmd.value))

    def flush(emitter: _StepEmitter) -> None:
        sink(emitter.finish())

    try:
        emitter = _StepEmitter(run_id, 0, 0.0)
        _sync_components(world)
        _emit_engine_records(world, emitter)
        flush(emitter)
    except Exception as exc:
        return RunOutcome(OUTCOME_FAILED, f"sink failed: {exc}", 0)

    while world.clock.step < max_steps:
        poll_control()
        while paused and not stop_requested:
            time.sleep(0.002)
            poll_control()
        if stop_requested:
            return RunOutcome(OUTCOME_STOPPED, "stopped by command", world.clock.step)
        if pacer is not None:
            pacer(world.clock.step)

        world.clock.advance()
        step = world.clock.step
        emitter = _StepEmitter(run_id, step, world.clock.sim_time)

        if pending_params:
            for path, value in pending_params:
                _apply_set_param(world, emitter, path, value)
            pending_params.clear()

        for aid in world.sorted_ids():
            agent = world.agents[aid]
            if not agent.alive:
                continue
            behavior = world.behaviors[aid]
            bound_manifest = getattr(behavior, "manifest", None)

            def emit(tag: str, payload: dict, _aid=aid, _m=bound_manifest):
                emitter.emit(_aid, tag, payload, _m)

            try:
                wants_stop = behavior.step(dt, view, agent, emit)
            except Exception as exc:
                return RunOutcome(OUTCOME_FAILED, f"agent {aid} failed at step {step}: {exc}", step)
            if wants_stop:
                terminate_reason = f"terminated by {aid}"

        world.flush_spawns()
        _sync_components(world)
        try:
            _resolve_engagements(world, emitter)
            _emit_engine_records(world, emitter)
            flush(emitter)
        except RecordContractError as exc:
            return RunOutcome(OUTCOME_FAILED, str(exc), step)
        except Exception as exc:
            return RunOutcome(OUTCOME_FAILED, f"sink failed: {exc}", step)

        if terminate_reason:
            return RunOutcome(OUTCOME_COMPLETED, terminate_reason, step)

    return RunOutcome(OUTCOME_COMPLETED, "", world.clock.step)
