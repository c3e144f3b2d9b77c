"""Engine core: determinism, built-in model physics, control, records."""

import math
import queue

import pytest

from asa.engine import AgentState, builtin_registry, run_simulation
from asa.engine.models import MissilePursuit, rotate_toward_3d, turn_toward
from asa.protocol import ControlCommand
from asa.scenario import scenario_from_json

from conftest import records_canonical, run_collect


def mover_doc(agent_id="m1", side="BLUE", speed=200.0, turn=0.5, waypoints=(), start=(0, 0, 0), heading=0.0, components=(), **extra):
    params = {
        "speed_mps": speed,
        "max_turn_rate_rad_s": turn,
        "waypoints": [list(w) for w in waypoints],
        "start_pos": list(start),
        "start_heading_rad": heading,
    }
    params.update(extra)
    return {
        "agent_id": agent_id,
        "side": side,
        "model": {"name": "waypoint_platform", "version": "1.0"},
        "params": params,
        "components": list(components),
    }


def sensor_doc(agent_id, range_m, p_detect):
    return {
        "agent_id": agent_id,
        "side": "BLUE",
        "model": {"name": "range_sensor", "version": "1.0"},
        "params": {"range_m": range_m, "p_detect": p_detect},
        "components": [],
    }


def weapon_doc(agent_id, launch=5000.0, mspeed=800.0, mturn=2.0, hit=50.0, flight=40.0, shots=1):
    return {
        "agent_id": agent_id,
        "side": "BLUE",
        "model": {"name": "wez_weapon", "version": "1.0"},
        "params": {
            "launch_range_m": launch,
            "missile_speed_mps": mspeed,
            "missile_turn_rate_rad_s": mturn,
            "hit_radius_m": hit,
            "max_flight_s": flight,
            "shots": shots,
        },
        "components": [],
    }


def make_spec(agents, max_steps=100, dt=0.1, seed=7):
    return scenario_from_json(
        {
            "name": "t",
            "description": "",
            "sim": {"step_dt": dt, "max_steps": max_steps, "seed": seed},
            "agents": agents,
        }
    )


@pytest.fixture(scope="module")
def reg():
    return builtin_registry()


# --- run loop basics ----------------------------------------------------------


def test_zero_agent_scenario_completes_with_no_records(reg):
    outcome, records = run_collect(make_spec([], max_steps=10), reg)
    assert outcome.state == "COMPLETED"
    assert outcome.steps == 10
    assert records == []


def test_same_seed_twice_is_byte_identical(reg, reference_2v1):
    _, a = run_collect(reference_2v1, reg, run_id="r")
    _, b = run_collect(reference_2v1, reg, run_id="r")
    assert records_canonical(a) == records_canonical(b)


def test_step_zero_carries_initial_state(reg):
    spec = make_spec([mover_doc(start=(5.0, 6.0, 7.0))], max_steps=3)
    _, records = run_collect(spec, reg)
    first = [r for r in records if r["step"] == 0 and r["tag"] == "position"]
    assert len(first) == 1
    assert (first[0]["payload"]["x"], first[0]["payload"]["y"], first[0]["payload"]["z"]) == (5.0, 6.0, 7.0)


def test_records_sorted_by_agent_then_tag_within_step(reg, reference_2v1):
    _, records = run_collect(reference_2v1, reg)
    by_step: dict[int, list] = {}
    for r in records:
        by_step.setdefault(r["step"], []).append((r["agent_id"], r["tag"]))
    for step, keys in by_step.items():
        assert keys == sorted(keys), f"step {step} out of order"
        assert len(set(keys)) == len(keys), f"step {step} repeats a key"


def test_unknown_model_fails_cleanly(reg):
    doc = mover_doc()
    doc["model"]["name"] = "ghost"
    outcome, records = run_collect(make_spec([doc]), reg)
    assert outcome.state == "FAILED"
    assert "ghost" in outcome.reason


def test_sink_failure_fails_run(reg):
    def sink(_records):
        raise OSError("disk full")

    outcome = run_simulation(make_spec([mover_doc()]), reg, sink)
    assert outcome.state == "FAILED"
    assert "sink" in outcome.reason


# --- waypoint platform ----------------------------------------------------------


def test_straight_line_displacement(reg):
    # already aligned with the waypoint bearing: 10 steps at 200 m/s, dt 0.1
    spec = make_spec([mover_doc(speed=200.0, waypoints=[(100000.0, 0.0, 0.0)])], max_steps=10)
    _, records = run_collect(spec, reg)
    last = [r for r in records if r["tag"] == "position" and r["step"] == 10][0]
    assert last["payload"]["x"] == pytest.approx(200.0, rel=1e-9)
    assert last["payload"]["y"] == pytest.approx(0.0, abs=1e-9)


def test_turn_rate_saturation_behind_waypoint(reg):
    # waypoint directly behind: heading must change by exactly omega*dt per step
    omega, dt = 0.5, 0.1
    spec = make_spec(
        [mover_doc(speed=10.0, turn=omega, waypoints=[(-100000.0, 0.0, 0.0)], heading=0.0)],
        max_steps=80, dt=dt,
    )
    _, records = run_collect(spec, reg)
    headings = [r["payload"]["heading"] for r in records if r["tag"] == "position"]
    for k in range(1, 10):
        delta = (headings[k] - headings[k - 1] + math.pi) % (2 * math.pi) - math.pi
        assert abs(delta) == pytest.approx(omega * dt, abs=1e-12)
    # aligned on the back bearing by step pi/(omega*dt) ~ 63
    steady = headings[-1]
    assert abs((steady - math.pi + math.pi) % (2 * math.pi) - math.pi) < omega * dt + 1e-9


def test_circular_orbit_radius_matches_v_over_omega(reg):
    # tangential start at radius v/omega around the waypoint: a closed circle
    v, omega = 200.0, 0.2
    radius = v / omega  # 1000 m
    dt = 0.01
    period_steps = int(round(2 * math.pi / (omega * dt)))
    spec = make_spec(
        [mover_doc(speed=v, turn=omega, waypoints=[(0.0, 0.0, 0.0)], start=(radius, 0.0, 0.0), heading=math.pi / 2, capture_radius_m=1.0)],
        max_steps=period_steps + 20, dt=dt,
    )
    _, records = run_collect(spec, reg)
    segment = [r for r in records if r["tag"] == "position" and r["step"] > 10]
    assert len(segment) > period_steps
    for r in segment:
        dist = math.hypot(r["payload"]["x"], r["payload"]["y"])
        assert dist == pytest.approx(radius, rel=0.01)


def test_climb_rate_limited(reg):
    spec = make_spec(
        [mover_doc(speed=100.0, waypoints=[(50000.0, 0.0, 5000.0)], climb_rate_mps=50.0)],
        max_steps=20,
    )
    _, records = run_collect(spec, reg)
    zs = [r["payload"]["z"] for r in records if r["tag"] == "position"]
    for a, b in zip(zs, zs[1:]):
        assert b - a == pytest.approx(5.0, abs=1e-9)  # 50 m/s * 0.1 s


def test_kinematic_bound_on_reference_scenario(reg, reference_2v1):
    _, records = run_collect(reference_2v1, reg)
    tracks: dict[str, list] = {}
    for r in records:
        if r["tag"] == "position":
            tracks.setdefault(r["agent_id"], []).append(r)
    dt = 0.1
    for agent_id, recs in tracks.items():
        for a, b in zip(recs, recs[1:]):
            if b["step"] != a["step"] + 1:
                continue
            moved = math.dist(
                (a["payload"]["x"], a["payload"]["y"], a["payload"]["z"]),
                (b["payload"]["x"], b["payload"]["y"], b["payload"]["z"]),
            )
            assert moved <= b["payload"]["speed"] * dt + 1e-6, agent_id


# --- declaration-order independence ----------------------------------------------


def test_agent_declaration_order_does_not_change_trajectories(reg, reference_2v1):
    _, forward = run_collect(reference_2v1, reg, run_id="r")
    doc = reference_2v1.to_json()
    doc["agents"] = list(reversed(doc["agents"]))
    _, permuted = run_collect(scenario_from_json(doc), reg, run_id="r")
    assert records_canonical(forward) == records_canonical(permuted)


# --- range sensor ------------------------------------------------------------------


def two_platform_geometry(p_detect, steps, range_m=5000.0, second_side="RED"):
    return make_spec(
        [
            mover_doc("blue1", speed=0.0, components=[sensor_doc("blue1_radar", range_m, p_detect)]),
            dict(mover_doc("red1", side=second_side, speed=0.0, start=(1000.0, 0.0, 0.0))),
        ],
        max_steps=steps,
    )


def test_sensor_certain_detection_every_step(reg):
    _, records = run_collect(two_platform_geometry(1.0, 50), reg)
    detections = [r for r in records if r["tag"] == "detection"]
    assert len(detections) == 50
    assert all(r["payload"]["target_id"] == "red1" for r in detections)
    assert all(r["payload"]["range_m"] == pytest.approx(1000.0) for r in detections)


def test_sensor_zero_probability_never_detects(reg):
    _, records = run_collect(two_platform_geometry(0.0, 50), reg)
    assert [r for r in records if r["tag"] == "detection"] == []


def test_sensor_ignores_out_of_range_and_friends(reg):
    _, records = run_collect(two_platform_geometry(1.0, 20, range_m=500.0), reg)
    assert [r for r in records if r["tag"] == "detection"] == []
    _, records = run_collect(two_platform_geometry(1.0, 20, second_side="BLUE"), reg)
    assert [r for r in records if r["tag"] == "detection"] == []


def test_sensor_monte_carlo_rate(reg):
    # seeded stream: deterministic empirical rate, expected 0.3 +/- 0.01
    _, records = run_collect(two_platform_geometry(0.3, 10_000), reg)
    rate = sum(1 for r in records if r["tag"] == "detection") / 10_000
    assert abs(rate - 0.3) < 0.01


# --- weapon and missile ---------------------------------------------------------------


def intercept_spec(target_speed=0.0, target_heading=0.0, distance=1000.0, shots=1, steps=300, **weapon_kw):
    return make_spec(
        [
            mover_doc(
                "blue1",
                speed=0.0,
                components=[sensor_doc("blue1_radar", 50000.0, 1.0), weapon_doc("blue1_gun", shots=shots, **weapon_kw)],
            ),
            dict(
                mover_doc(
                    "red1", side="RED", speed=target_speed, start=(distance, 0.0, 0.0), heading=target_heading,
                    waypoints=[], turn=0.5,
                )
            ),
        ],
        max_steps=steps,
    )


def test_stationary_target_hit_at_hand_integrated_step(reg):
    # 1 km straight chase at 800 m/s, hit radius 50: first step with dist < 50
    # is step 12 after launch (hand integration: 1000 - 12*80 = 40 < 50).
    outcome, records = run_collect(intercept_spec(launch=2000.0), reg)
    launches = [r for r in records if r["tag"] == "launch"]
    hits = [r for r in records if r["tag"] == "hit"]
    assert len(launches) == 1 and len(hits) == 1
    launch_step = launches[0]["step"]
    assert launches[0]["agent_id"] == "blue1_gun"
    assert launches[0]["payload"]["missile_id"] == "blue1_gun.m1"
    assert hits[0]["agent_id"] == "blue1_gun.m1"
    assert hits[0]["step"] - launch_step == 12
    # target is dead from the hit step on
    dead = [r for r in records if r["tag"] == "status" and r["agent_id"] == "red1" and not r["payload"]["alive"]]
    assert dead and dead[0]["step"] == hits[0]["step"]


def test_target_outside_launch_range_forever(reg):
    outcome, records = run_collect(intercept_spec(distance=8000.0, launch=2000.0), reg)
    assert [r for r in records if r["tag"] == "launch"] == []


def test_receding_faster_than_missile_times_out(reg):
    # target at 1 km flying away at 900 m/s > missile 800 m/s
    spec = intercept_spec(target_speed=900.0, target_heading=0.0, launch=2000.0, flight=10.0, steps=200)
    _, records = run_collect(spec, reg)
    misses = [r for r in records if r["tag"] == "miss"]
    assert len(misses) == 1
    assert misses[0]["payload"]["reason"] == "timeout"
    assert [r for r in records if r["tag"] == "hit"] == []


def test_shot_budget_respected(reg):
    _, records = run_collect(intercept_spec(shots=1), reg)
    assert len([r for r in records if r["tag"] == "launch"]) == 1


def test_conservation_of_identity(reg, reference_2v1):
    _, records = run_collect(reference_2v1, reg)
    declared = set(reference_2v1.agent_ids())
    seen = {r["agent_id"] for r in records}
    for agent_id in seen:
        if agent_id in declared:
            continue
        stem, _, tail = agent_id.rpartition(".m")
        assert stem in declared and tail.isdigit(), f"unexpected agent {agent_id}"


def test_reference_scenario_spawns_two_missiles_and_kills_target(reg, reference_2v1):
    _, records = run_collect(reference_2v1, reg)
    launches = [r for r in records if r["tag"] == "launch"]
    hits = [r for r in records if r["tag"] == "hit"]
    misses = [r for r in records if r["tag"] == "miss"]
    assert len(launches) == 2
    assert len(hits) == 1
    assert len(misses) == 1
    assert misses[0]["payload"]["reason"] == "target_lost"
    ids = {r["agent_id"] for r in records}
    assert {"blue1_gun.m1", "blue2_gun.m1"} <= ids
    assert len(ids) == 10  # 8 declared + 2 missiles


# --- control at step boundaries ---------------------------------------------------


class ScriptedControl:
    """Feeds commands when the run reaches given step numbers."""

    def __init__(self, script: dict[int, list]):
        self.script = dict(script)
        self.seen_step = -1

    def attach(self, records_out):
        self._records = records_out

    def __call__(self):
        step = max((r["step"] for r in self._records), default=-1)
        if step != self.seen_step and step in self.script:
            self.seen_step = step
            return self.script.pop(step)
        return []


def test_pause_resume_is_record_invariant(reg, reference_2v1):
    _, baseline = run_collect(reference_2v1, reg, run_id="r")

    records: list[dict] = []
    q = queue.Queue()
    fired = {"pause": False}

    def control():
        cmds = []
        step = max((r["step"] for r in records), default=-1)
        if step >= 300 and not fired["pause"]:
            fired["pause"] = True
            q.put_nowait(ControlCommand.resume())
            cmds.append(ControlCommand.pause())
            return cmds
        if fired["pause"]:
            try:
                return [q.get_nowait()]
            except queue.Empty:
                return []
        return []

    outcome = run_simulation(reference_2v1, reg, records.extend, control=control, run_id="r")
    assert outcome.state == "COMPLETED"
    assert records_canonical(records) == records_canonical(baseline)


def test_stop_terminates_promptly(reg, reference_2v1):
    records: list[dict] = []
    state = {"sent": False}

    def control():
        step = max((r["step"] for r in records), default=-1)
        if step >= 100 and not state["sent"]:
            state["sent"] = True
            return [ControlCommand.stop()]
        return []

    outcome = run_simulation(reference_2v1, reg, records.extend, control=control, run_id="r")
    assert outcome.state == "STOPPED"
    last_step = max(r["step"] for r in records)
    assert last_step <= 102
    assert outcome.steps <= 102


def test_set_param_diverges_only_after_boundary(reg):
    spec = make_spec([mover_doc(speed=100.0, waypoints=[(100000.0, 0.0, 0.0)])], max_steps=40)
    _, baseline = run_collect(spec, reg, run_id="r")

    records: list[dict] = []
    state = {"sent": False}

    def control():
        step = max((r["step"] for r in records), default=-1)
        if step >= 20 and not state["sent"]:
            state["sent"] = True
            return [ControlCommand.set_param("m1", "agents.m1.params.speed_mps", 200.0)]
        return []

    outcome = run_simulation(spec, reg, records.extend, control=control, run_id="r")
    assert outcome.state == "COMPLETED"
    base_pos = {r["step"]: r for r in baseline if r["tag"] == "position"}
    new_pos = {r["step"]: r for r in records if r["tag"] == "position"}
    for step in range(0, 21):
        assert new_pos[step]["payload"] == base_pos[step]["payload"]
    assert any(new_pos[s]["payload"] != base_pos[s]["payload"] for s in range(22, 40))


def test_set_param_to_unknown_agent_emits_no_foreign_ids(reg):
    spec = make_spec([mover_doc()], max_steps=10)
    state = {"sent": False}
    records: list[dict] = []

    def control():
        if not state["sent"] and records:
            state["sent"] = True
            return [
                ControlCommand.set_param("ghost", "agents.ghost.params.x", 1),
                ControlCommand.set_param("m1", "not-even-a-path", 1),
            ]
        return []

    outcome = run_simulation(spec, reg, records.extend, control=control)
    assert outcome.state == "COMPLETED"
    # conservation of identity: no record may name an undeclared agent
    assert {r["agent_id"] for r in records} == {"m1"}


def test_unknown_set_param_path_records_rejection(reg):
    spec = make_spec([mover_doc()], max_steps=10)
    records: list[dict] = []
    state = {"sent": False}

    def control():
        step = max((r["step"] for r in records), default=-1)
        if step >= 2 and not state["sent"]:
            state["sent"] = True
            return [ControlCommand.set_param("m1", "agents.m1.params.no_such_knob", 5)]
        return []

    outcome = run_simulation(spec, reg, records.extend, control=control)
    assert outcome.state == "COMPLETED"
    rejected = [r for r in records if r["tag"] == "param_rejected"]
    assert len(rejected) == 1
    assert rejected[0]["payload"]["path"] == "agents.m1.params.no_such_knob"


# --- geometry helpers ---------------------------------------------------------------


def test_turn_toward_wraps_and_clamps():
    assert turn_toward(0.1, 0.2, 0.5) == pytest.approx(0.2)
    assert turn_toward(0.0, 1.0, 0.25) == pytest.approx(0.25)
    assert turn_toward(6.2, 0.1, 0.5) == pytest.approx((6.2 + (0.1 - 6.2 + 2 * math.pi)) % (2 * math.pi))


def test_rotate_toward_3d_clamps_angle():
    d = (1.0, 0.0, 0.0)
    t = (0.0, 1.0, 0.0)
    out = rotate_toward_3d(d, t, 0.1)
    angle = math.acos(max(-1, min(1, out[0] * d[0] + out[1] * d[1] + out[2] * d[2])))
    assert angle == pytest.approx(0.1, abs=1e-9)
    assert math.sqrt(sum(c * c for c in out)) == pytest.approx(1.0)
    assert rotate_toward_3d(d, t, 3.0) == t
    # anti-parallel is deterministic and makes progress
    back = rotate_toward_3d(d, (-1.0, 0.0, 0.0), 0.2)
    assert math.sqrt(sum(c * c for c in back)) == pytest.approx(1.0)
    assert back != d
