"""Seeded generator of schema-valid protocol messages for fuzz tests.

Deliberately independent of the codec: it builds message values from a
plain random.Random so round-trip failures cannot be masked by shared code.
"""

from __future__ import annotations

import random
import string

from asa import protocol as P


def _ident(rng: random.Random, n=8) -> str:
    return "".join(rng.choice(string.ascii_lowercase + string.digits) for _ in range(n))


def _text(rng: random.Random) -> str:
    pool = string.printable + "åé∆ب中"
    return "".join(rng.choice(pool) for _ in range(rng.randrange(0, 24)))


def _payload(rng: random.Random) -> dict:
    out = {}
    for _ in range(rng.randrange(0, 5)):
        key = _ident(rng, 5)
        pick = rng.randrange(4)
        if pick == 0:
            out[key] = rng.randrange(-(10**6), 10**6)
        elif pick == 1:
            out[key] = rng.uniform(-1e6, 1e6)
        elif pick == 2:
            out[key] = _text(rng)
        else:
            out[key] = rng.random() < 0.5
    return out


def _record(rng: random.Random, run_id: str, step: int, agent_id: str, tag: str) -> dict:
    return {
        "run_id": run_id,
        "step": step,
        "sim_time": step * 0.1,
        "tag": tag,
        "agent_id": agent_id,
        "payload": _payload(rng),
    }


def _records(rng: random.Random, run_id: str) -> list[dict]:
    keys = set()
    while len(keys) < rng.randrange(0, 6):
        keys.add((rng.randrange(0, 50), _ident(rng, 4), rng.choice(["position", "status", "detection"])))
    return [_record(rng, run_id, s, a, t) for s, a, t in sorted(keys)]


def _command(rng: random.Random) -> P.ControlCommand:
    kind = rng.choice(["play", "pause", "resume", "stop", "set_speed", "set_param"])
    if kind == "set_speed":
        return P.ControlCommand.set_speed(rng.choice([0, 0.5, 1.0, 2.0, rng.uniform(0, 10)]))
    if kind == "set_param":
        return P.ControlCommand.set_param(
            _ident(rng),
            f"agents.{_ident(rng, 4)}.params.{_ident(rng, 4)}",
            rng.choice([rng.randrange(100), _text(rng), rng.random() < 0.5]),
        )
    return P.ControlCommand(kind)


def random_message(rng: random.Random) -> P.Message:
    """One schema-valid message of a random variant."""
    run_id = _ident(rng)
    node_id = _ident(rng, 6)
    pick = rng.randrange(10)
    if pick == 0:
        return P.Hello(node_id, rng.randrange(1, 9))
    if pick == 1:
        return P.Heartbeat(node_id, tuple(_ident(rng) for _ in range(rng.randrange(0, 4))))
    if pick == 2:
        return P.Assign({"request_id": run_id, "seed": rng.randrange(2**63), "origin": {"batch_id": _ident(rng), "index": rng.randrange(100)}, "scenario": {"name": _text(rng), "description": "", "sim": {"step_dt": 0.1, "max_steps": 10, "seed": 1}, "agents": []}})
    if pick == 3:
        return P.AssignAck(run_id, rng.random() < 0.5, rng.choice(["", "capacity", _text(rng)]))
    if pick == 4:
        return P.Control(run_id, _command(rng))
    if pick == 5:
        return P.RunStateChange(run_id, rng.choice(P.RUN_STATES), _text(rng))
    if pick == 6:
        return P.RecordBatch(run_id, tuple(_records(rng, run_id)))
    if pick == 7:
        return P.RecordAck(run_id, rng.randrange(10**6))
    if pick == 8:
        return P.Bye(node_id)
    return P.Error(rng.choice(["bad_run", "capacity", "internal"]), _text(rng))
