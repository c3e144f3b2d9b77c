"""Built-in agent models: waypoint platform, range sensor, WEZ weapon, missile.

Deliberately minimal physics - every behavior here has a closed-form or
brute-force oracle in the test suite. Positions are flat-ENU meters,
headings are radians in [0, 2*pi) with 0 = east, counter-clockwise
positive. All randomness comes from the owning agent's stream.
"""

from __future__ import annotations

import math

from ..manifest import ModelManifest, ParamSpec, TagSpec
from .core import AgentState, PerceptionView, TWO_PI, World, dist3, opposing

DEFAULT_CAPTURE_RADIUS_M = 100.0
DEFAULT_CLIMB_RATE_MPS = 50.0


def wrap_bearing(delta: float) -> float:
    """Wrap an angle difference into [-pi, pi)."""
    return (delta + math.pi) % TWO_PI - math.pi


def turn_toward(heading: float, bearing: float, max_turn: float) -> float:
    delta = wrap_bearing(bearing - heading)
    if delta > max_turn:
        delta = max_turn
    elif delta < -max_turn:
        delta = -max_turn
    return (heading + delta) % TWO_PI


def rotate_toward_3d(
    d: tuple[float, float, float], t: tuple[float, float, float], max_angle: float
) -> tuple[float, float, float]:
    """Rotate unit vector d toward unit vector t by at most max_angle radians.

    Spherical interpolation in the plane spanned by both vectors; for the
    anti-parallel case the turn plane is chosen deterministically.
    """
    dot = max(-1.0, min(1.0, d[0] * t[0] + d[1] * t[1] + d[2] * t[2]))
    angle = math.acos(dot)
    if angle <= max_angle or angle < 1e-12:
        return t
    if angle > math.pi - 1e-9:
        # anti-parallel: rotate within a fixed plane through d
        perp = (-d[1], d[0], 0.0) if abs(d[0]) + abs(d[1]) > 1e-9 else (1.0, 0.0, 0.0)
        norm = math.sqrt(perp[0] ** 2 + perp[1] ** 2 + perp[2] ** 2)
        c, s = math.cos(max_angle), math.sin(max_angle)
        return (
            d[0] * c + perp[0] / norm * s,
            d[1] * c + perp[1] / norm * s,
            d[2] * c + perp[2] / norm * s,
        )
    sin_total = math.sin(angle)
    a = math.sin(angle - max_angle) / sin_total
    b = math.sin(max_angle) / sin_total
    nx, ny, nz = a * d[0] + b * t[0], a * d[1] + b * t[1], a * d[2] + b * t[2]
    norm = math.sqrt(nx * nx + ny * ny + nz * nz)
    return (nx / norm, ny / norm, nz / norm)


WAYPOINT_PLATFORM = ModelManifest(
    name="waypoint_platform",
    version="1.0",
    params=(
        ParamSpec("speed_mps", "number", required=True, bounds=(0.0, 3000.0)),
        ParamSpec("max_turn_rate_rad_s", "number", required=True, bounds=(0.0, 10.0)),
        ParamSpec("waypoints", "list", default=[]),
        ParamSpec("capture_radius_m", "number", default=DEFAULT_CAPTURE_RADIUS_M),
        ParamSpec("climb_rate_mps", "number", default=DEFAULT_CLIMB_RATE_MPS),
        ParamSpec("start_pos", "list", default=[0.0, 0.0, 0.0]),
        ParamSpec("start_heading_rad", "number", default=0.0),
    ),
    accepted_components=("range_sensor", "wez_weapon"),
)

RANGE_SENSOR = ModelManifest(
    name="range_sensor",
    version="1.0",
    params=(
        ParamSpec("range_m", "number", required=True, bounds=(0.0, 1e7)),
        ParamSpec("p_detect", "number", required=True, bounds=(0.0, 1.0)),
    ),
    emitted_tags=(TagSpec("detection", ("target_id", "range_m")),),
)

WEZ_WEAPON = ModelManifest(
    name="wez_weapon",
    version="1.0",
    params=(
        ParamSpec("launch_range_m", "number", required=True, bounds=(0.0, 1e7)),
        ParamSpec("missile_speed_mps", "number", required=True, bounds=(0.0, 5000.0)),
        ParamSpec("missile_turn_rate_rad_s", "number", required=True, bounds=(0.0, 20.0)),
        ParamSpec("hit_radius_m", "number", required=True, bounds=(0.0, 10000.0)),
        ParamSpec("max_flight_s", "number", required=True, bounds=(0.0, 7200.0)),
        ParamSpec("shots", "number", required=True, bounds=(0.0, 1000.0)),
    ),
    emitted_tags=(TagSpec("launch", ("target_id", "missile_id", "range_m")),),
)

# Spawned only; not registered for scenario use.
MISSILE = ModelManifest(
    name="missile",
    version="1.0",
    emitted_tags=(
        TagSpec("hit", ("target_id",)),
        TagSpec("miss", ("target_id", "reason")),
    ),
)

BUILTIN_MANIFESTS = (WAYPOINT_PLATFORM, RANGE_SENSOR, WEZ_WEAPON)


class WaypointPlatform:
    """Constant-speed platform flying a waypoint route.

    Per step: turn toward the current waypoint (rate-limited), move
    speed*dt along the new heading, climb/descend toward the waypoint
    altitude (rate-limited), then advance the route when within the
    capture radius horizontally. After the last waypoint it holds heading.
    """

    manifest = WAYPOINT_PLATFORM

    def init(self, agent: AgentState, params: dict, rng) -> None:
        agent.x, agent.y, agent.z = (float(v) for v in params["start_pos"])
        agent.heading = float(params["start_heading_rad"]) % TWO_PI
        agent.speed = float(params["speed_mps"])
        self.max_turn = float(params["max_turn_rate_rad_s"])
        self.capture = float(params["capture_radius_m"])
        self.climb = float(params["climb_rate_mps"])
        self.waypoints = [tuple(float(c) for c in wp) for wp in params["waypoints"]]
        self.next_wp = 0

    def step(self, dt: float, view: PerceptionView, agent: AgentState, emit) -> None:
        wp = self.waypoints[self.next_wp] if self.next_wp < len(self.waypoints) else None
        if wp is not None:
            bearing = math.atan2(wp[1] - agent.y, wp[0] - agent.x)
            agent.heading = turn_toward(agent.heading, bearing, self.max_turn * dt)
        agent.x += agent.speed * dt * math.cos(agent.heading)
        agent.y += agent.speed * dt * math.sin(agent.heading)
        if wp is not None:
            dz = wp[2] - agent.z
            max_dz = self.climb * dt
            agent.z += max(-max_dz, min(max_dz, dz))
            if agent.z < 0.0:
                agent.z = 0.0
            if math.hypot(wp[0] - agent.x, wp[1] - agent.y) < self.capture:
                self.next_wp += 1

    def on_set_param(self, agent: AgentState, key_path: str, value) -> bool:
        if key_path == "speed_mps" and isinstance(value, (int, float)):
            agent.speed = float(value)
            return True
        if key_path == "waypoints" and isinstance(value, list):
            self.waypoints = [tuple(float(c) for c in wp) for wp in value]
            self.next_wp = 0
            return True
        return False


class RangeSensor:
    """Probabilistic detector mounted on a platform.

    Scans alive opposing platforms within range from the carrier's
    position, drawing one Bernoulli(p_detect) per candidate in ascending
    target id order from its own stream. Every success refreshes the
    carrier's live detection set; the nearest success also produces the
    per-step "detection" record.
    """

    manifest = RANGE_SENSOR

    def init(self, agent: AgentState, params: dict, rng) -> None:
        self.range_m = float(params["range_m"])
        self.p_detect = float(params["p_detect"])
        self.rng = rng

    def step(self, dt: float, view: PerceptionView, agent: AgentState, emit) -> None:
        carrier = view.carrier(agent)
        if carrier is None or not carrier.alive:
            return
        nearest: tuple[float, str] | None = None
        for target in view.opposing_platforms(agent.side):
            d = dist3(carrier, target)
            if d > self.range_m:
                continue
            if self.rng.next_bool(self.p_detect):
                carrier.detections[target.agent_id] = view.step
                if nearest is None or d < nearest[0]:
                    nearest = (d, target.agent_id)
        if nearest is not None:
            emit("detection", {"target_id": nearest[1], "range_m": nearest[0]})

    def on_set_param(self, agent: AgentState, key_path: str, value) -> bool:
        if key_path == "p_detect" and isinstance(value, (int, float)) and 0.0 <= value <= 1.0:
            self.p_detect = float(value)
            return True
        if key_path == "range_m" and isinstance(value, (int, float)) and value >= 0:
            self.range_m = float(value)
            return True
        return False


class WezWeapon:
    """Launcher firing pure-pursuit missiles at detected targets.

    Fires at the nearest currently-detected opposing platform once the
    carrier is within launch range, while shots remain; one launch per
    step. A detection is current if made at this or the previous step.
    """

    manifest = WEZ_WEAPON
    _world: World | None = None

    def init(self, agent: AgentState, params: dict, rng) -> None:
        self.launch_range_m = float(params["launch_range_m"])
        self.missile_speed_mps = float(params["missile_speed_mps"])
        self.missile_turn_rate_rad_s = float(params["missile_turn_rate_rad_s"])
        self.hit_radius_m = float(params["hit_radius_m"])
        self.max_flight_s = float(params["max_flight_s"])
        self.shots_left = int(params["shots"])
        self.fired = 0

    def bind_world(self, world: World) -> None:
        self._world = world

    def step(self, dt: float, view: PerceptionView, agent: AgentState, emit) -> None:
        if self.shots_left <= 0:
            return
        carrier = view.carrier(agent)
        if carrier is None or not carrier.alive:
            return
        best: tuple[float, str, AgentState] | None = None
        for target_id in sorted(carrier.detections):
            if carrier.detections[target_id] < view.step - 1:
                continue
            target = view.agent(target_id)
            if target is None or target.kind != "platform" or not opposing(agent.side, target.side):
                continue
            d = dist3(carrier, target)
            if d <= self.launch_range_m and (best is None or d < best[0]):
                best = (d, target_id, target)
        if best is None:
            return
        d, target_id, target = best
        self.fired += 1
        self.shots_left -= 1
        missile_id = f"{agent.agent_id}.m{self.fired}"
        missile = AgentState(
            agent_id=missile_id,
            side=agent.side,
            kind="missile",
            x=carrier.x,
            y=carrier.y,
            z=carrier.z,
            speed=self.missile_speed_mps,
        )
        behavior = MissilePursuit(
            target_id=target_id,
            speed=self.missile_speed_mps,
            turn_rate=self.missile_turn_rate_rad_s,
            hit_radius_m=self.hit_radius_m,
            max_flight_s=self.max_flight_s,
            launch_step=view.step,
            launch_from=(carrier.x, carrier.y, carrier.z),
            toward=(target.x, target.y, target.z),
        )
        missile.heading = math.atan2(behavior.dir[1], behavior.dir[0]) % TWO_PI
        assert self._world is not None, "weapon not bound to a world"
        self._world.request_spawn(missile, behavior)
        emit("launch", {"target_id": target_id, "missile_id": missile_id, "range_m": d})

    def on_set_param(self, agent: AgentState, key_path: str, value) -> bool:
        if key_path == "launch_range_m" and isinstance(value, (int, float)) and value >= 0:
            self.launch_range_m = float(value)
            return True
        return False


class MissilePursuit:
    """Engine-internal missile: turn-rate-limited pursuit of one target.

    The velocity vector keeps constant magnitude and rotates toward the
    target's current position by at most turn_rate*dt per step. Hit, miss,
    and timeout outcomes are resolved by the engine's engagement pass.
    """

    manifest = MISSILE
    _world: World | None = None

    def __init__(
        self,
        target_id: str,
        speed: float,
        turn_rate: float,
        hit_radius_m: float,
        max_flight_s: float,
        launch_step: int,
        launch_from: tuple[float, float, float],
        toward: tuple[float, float, float],
    ):
        self.target_id = target_id
        self.speed = speed
        self.turn_rate = turn_rate
        self.hit_radius_m = hit_radius_m
        self.max_flight_s = max_flight_s
        self.launch_step = launch_step
        dx = toward[0] - launch_from[0]
        dy = toward[1] - launch_from[1]
        dz = toward[2] - launch_from[2]
        norm = math.sqrt(dx * dx + dy * dy + dz * dz)
        self.dir = (dx / norm, dy / norm, dz / norm) if norm > 0 else (1.0, 0.0, 0.0)

    def bind_world(self, world: World) -> None:
        self._world = world

    def init(self, agent: AgentState, params: dict, rng) -> None:  # pragma: no cover
        pass

    def step(self, dt: float, view: PerceptionView, agent: AgentState, emit) -> None:
        world = self._world
        target = world.agents.get(self.target_id) if world is not None else None
        if target is not None and target.alive:
            dx, dy, dz = target.x - agent.x, target.y - agent.y, target.z - agent.z
            norm = math.sqrt(dx * dx + dy * dy + dz * dz)
            if norm > 1e-9:
                self.dir = rotate_toward_3d(self.dir, (dx / norm, dy / norm, dz / norm), self.turn_rate * dt)
        agent.x += self.speed * dt * self.dir[0]
        agent.y += self.speed * dt * self.dir[1]
        agent.z += self.speed * dt * self.dir[2]
        agent.heading = math.atan2(self.dir[1], self.dir[0]) % TWO_PI
        agent.speed = self.speed

    def on_set_param(self, agent: AgentState, key_path: str, value) -> bool:
        return False
