"""Wire protocol between manager, handlers, and nodes.

Frame layout (bit-exact for every TCP link, default manager port 4810):

    ┌────────────┬─────────┬──────────┬──────────────────┐
    │ length     │ version │ msg_type │ body             │
    │ uint32 BE  │ uint8=1 │ uint8    │ UTF-8 JSON       │
    └────────────┴─────────┴──────────┴──────────────────┘

``length`` counts version + msg_type + body (2 + len(body)). Bodies are
canonical JSON (sorted keys), so encoding is byte-stable. Frames declaring
more than 16 MiB are rejected before their body is buffered. No TLS, no
negotiation: any version other than 1 is a hard decode error.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Iterator, Union

from .jsonutil import canonical_bytes, canonical_dumps

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024
DEFAULT_PORT = 4810

_HEADER = struct.Struct(">IBB")


class ProtocolError(Exception):
    """Base for every decode failure. Never allowed to kill a process."""


class NeedMoreBytes(ProtocolError):
    """Frame incomplete; feed more bytes, nothing was consumed."""


class BadVersion(ProtocolError):
    def __init__(self, version: int):
        super().__init__(f"unsupported protocol version {version}")
        self.version = version


class UnknownType(ProtocolError):
    def __init__(self, msg_type: int):
        super().__init__(f"unknown msg_type {msg_type}")
        self.msg_type = msg_type


class BadBody(ProtocolError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class FrameTooLarge(ProtocolError):
    def __init__(self, declared: int):
        super().__init__(f"frame declares {declared} bytes, limit {MAX_FRAME_BYTES}")
        self.declared = declared


# --- control commands ------------------------------------------------------

_COMMAND_KINDS = ("play", "pause", "resume", "stop", "set_speed", "set_param")


@dataclass(frozen=True)
class ControlCommand:
    """One run-control order: play/pause/resume/stop, a speed change, or a
    mid-run parameter change routed to a model."""

    kind: str
    factor: float | None = None
    agent_id: str | None = None
    param_path: str | None = None
    value: Any = None

    def __post_init__(self):
        if self.kind not in _COMMAND_KINDS:
            raise ValueError(f"unknown command kind {self.kind!r}")
        if self.kind == "set_speed":
            if not isinstance(self.factor, (int, float)) or isinstance(self.factor, bool) or self.factor < 0:
                raise ValueError("set_speed factor must be a number >= 0")
        if self.kind == "set_param":
            if not self.agent_id or not self.param_path:
                raise ValueError("set_param requires agent_id and param_path")

    def to_json(self) -> dict:
        doc: dict[str, Any] = {"type": self.kind}
        if self.kind == "set_speed":
            doc["factor"] = self.factor
        elif self.kind == "set_param":
            doc["agent_id"] = self.agent_id
            doc["param_path"] = self.param_path
            doc["value"] = self.value
        return doc

    @staticmethod
    def from_json(doc: Any) -> "ControlCommand":
        if not isinstance(doc, dict) or "type" not in doc:
            raise BadBody("command must be an object with a 'type' field")
        kind = doc["type"]
        if kind not in _COMMAND_KINDS:
            raise BadBody(f"unknown command type {kind!r}")
        if kind == "set_speed":
            args = {"factor"}
        elif kind == "set_param":
            args = {"agent_id", "param_path", "value"}
        else:
            args = set()
        extra = set(doc) - args - {"type"}
        if extra:
            raise BadBody(f"command carries fields outside its schema: {sorted(extra)}")
        missing = args - set(doc)
        if missing:
            raise BadBody(f"command missing required field: {sorted(missing)}")
        try:
            if kind == "set_speed":
                return ControlCommand("set_speed", factor=doc["factor"])
            if kind == "set_param":
                return ControlCommand(
                    "set_param",
                    agent_id=doc["agent_id"],
                    param_path=doc["param_path"],
                    value=doc["value"],
                )
            return ControlCommand(kind)
        except ValueError as exc:
            raise BadBody(str(exc)) from None

    # convenience constructors
    @staticmethod
    def play() -> "ControlCommand":
        return ControlCommand("play")

    @staticmethod
    def pause() -> "ControlCommand":
        return ControlCommand("pause")

    @staticmethod
    def resume() -> "ControlCommand":
        return ControlCommand("resume")

    @staticmethod
    def stop() -> "ControlCommand":
        return ControlCommand("stop")

    @staticmethod
    def set_speed(factor: float) -> "ControlCommand":
        return ControlCommand("set_speed", factor=factor)

    @staticmethod
    def set_param(agent_id: str, param_path: str, value: Any) -> "ControlCommand":
        return ControlCommand("set_param", agent_id=agent_id, param_path=param_path, value=value)


# --- messages ---------------------------------------------------------------


@dataclass(frozen=True)
class Hello:
    node_id: str
    capacity: int


@dataclass(frozen=True)
class Heartbeat:
    node_id: str
    running_run_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Assign:
    execution_request: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AssignAck:
    run_id: str
    accepted: bool
    reason: str = ""


@dataclass(frozen=True)
class Control:
    run_id: str
    command: ControlCommand = ControlCommand("stop")


@dataclass(frozen=True)
class RunStateChange:
    run_id: str
    state: str
    detail: str = ""


@dataclass(frozen=True)
class RecordBatch:
    run_id: str
    records: tuple[dict, ...] = ()


@dataclass(frozen=True)
class RecordAck:
    run_id: str
    through_step: int = 0


@dataclass(frozen=True)
class Bye:
    node_id: str


@dataclass(frozen=True)
class Error:
    code: str
    text: str = ""


Message = Union[
    Hello, Heartbeat, Assign, AssignAck, Control,
    RunStateChange, RecordBatch, RecordAck, Bye, Error,
]

MSG_TYPES: dict[type, int] = {
    Hello: 1,
    Heartbeat: 2,
    Assign: 3,
    AssignAck: 4,
    Control: 5,
    RunStateChange: 6,
    RecordBatch: 7,
    RecordAck: 8,
    Bye: 9,
    Error: 10,
}
_BY_CODE = {code: cls for cls, code in MSG_TYPES.items()}

RUN_STATES = ("PENDING", "ASSIGNED", "RUNNING", "PAUSED", "COMPLETED", "STOPPED", "FAILED")

RECORD_KEYS = ("agent_id", "payload", "run_id", "sim_time", "step", "tag")


def _want(doc: dict, key: str, types, what: str):
    if key not in doc:
        raise BadBody(f"{what} missing required field '{key}'")
    val = doc[key]
    if isinstance(val, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise BadBody(f"{what} field '{key}' has wrong type")
    if not isinstance(val, types):
        raise BadBody(f"{what} field '{key}' has wrong type")
    return val


def _no_extras(doc: dict, allowed: set[str], what: str):
    extra = set(doc) - allowed
    if extra:
        raise BadBody(f"{what} carries fields outside its schema: {sorted(extra)}")


def validate_record(rec: Any) -> dict:
    """Check one StepRecord document against its exact schema."""
    if not isinstance(rec, dict):
        raise BadBody("record must be an object")
    _no_extras(rec, set(RECORD_KEYS), "record")
    _want(rec, "run_id", str, "record")
    step = _want(rec, "step", int, "record")
    if step < 0:
        raise BadBody("record step must be >= 0")
    _want(rec, "sim_time", (int, float), "record")
    _want(rec, "tag", str, "record")
    _want(rec, "agent_id", str, "record")
    payload = _want(rec, "payload", dict, "record")
    for k, v in payload.items():
        if not isinstance(k, str):
            raise BadBody("record payload keys must be strings")
        if not isinstance(v, (int, float, str, bool)):
            raise BadBody(f"record payload value for '{k}' must be a scalar")
    return rec


def record_key(rec: dict) -> tuple[int, str, str]:
    return (rec["step"], rec["agent_id"], rec["tag"])


def _body_of(msg: Message) -> dict:
    if isinstance(msg, Hello):
        return {"node_id": msg.node_id, "capacity": msg.capacity}
    if isinstance(msg, Heartbeat):
        return {"node_id": msg.node_id, "running_run_ids": list(msg.running_run_ids)}
    if isinstance(msg, Assign):
        return {"execution_request": msg.execution_request}
    if isinstance(msg, AssignAck):
        return {"run_id": msg.run_id, "accepted": msg.accepted, "reason": msg.reason}
    if isinstance(msg, Control):
        return {"run_id": msg.run_id, "command": msg.command.to_json()}
    if isinstance(msg, RunStateChange):
        return {"run_id": msg.run_id, "state": msg.state, "detail": msg.detail}
    if isinstance(msg, RecordBatch):
        return {"run_id": msg.run_id, "records": list(msg.records)}
    if isinstance(msg, RecordAck):
        return {"run_id": msg.run_id, "through_step": msg.through_step}
    if isinstance(msg, Bye):
        return {"node_id": msg.node_id}
    if isinstance(msg, Error):
        return {"code": msg.code, "text": msg.text}
    raise TypeError(f"not a protocol message: {type(msg).__name__}")


def _parse_body(code: int, doc: Any) -> Message:
    if not isinstance(doc, dict):
        raise BadBody("body must be a JSON object")
    cls = _BY_CODE[code]
    name = cls.__name__

    if cls is Hello:
        _no_extras(doc, {"node_id", "capacity"}, name)
        cap = _want(doc, "capacity", int, name)
        if cap < 1:
            raise BadBody("Hello capacity must be >= 1")
        return Hello(_want(doc, "node_id", str, name), cap)

    if cls is Heartbeat:
        _no_extras(doc, {"node_id", "running_run_ids"}, name)
        runs = _want(doc, "running_run_ids", list, name)
        if not all(isinstance(r, str) for r in runs):
            raise BadBody("Heartbeat running_run_ids must be strings")
        return Heartbeat(_want(doc, "node_id", str, name), tuple(runs))

    if cls is Assign:
        _no_extras(doc, {"execution_request"}, name)
        return Assign(_want(doc, "execution_request", dict, name))

    if cls is AssignAck:
        _no_extras(doc, {"run_id", "accepted", "reason"}, name)
        return AssignAck(
            _want(doc, "run_id", str, name),
            _want(doc, "accepted", bool, name),
            _want(doc, "reason", str, name),
        )

    if cls is Control:
        _no_extras(doc, {"run_id", "command"}, name)
        cmd = ControlCommand.from_json(_want(doc, "command", dict, name))
        return Control(_want(doc, "run_id", str, name), cmd)

    if cls is RunStateChange:
        _no_extras(doc, {"run_id", "state", "detail"}, name)
        state = _want(doc, "state", str, name)
        if state not in RUN_STATES:
            raise BadBody(f"RunStateChange state {state!r} not recognized")
        return RunStateChange(_want(doc, "run_id", str, name), state, _want(doc, "detail", str, name))

    if cls is RecordBatch:
        _no_extras(doc, {"run_id", "records"}, name)
        run_id = _want(doc, "run_id", str, name)
        records = _want(doc, "records", list, name)
        prev = None
        for rec in records:
            validate_record(rec)
            if rec["run_id"] != run_id:
                raise BadBody("RecordBatch records must all share the envelope run_id")
            key = record_key(rec)
            if prev is not None and key <= prev:
                raise BadBody("RecordBatch records must be strictly ordered by (step, agent_id, tag)")
            prev = key
        return RecordBatch(run_id, tuple(records))

    if cls is RecordAck:
        _no_extras(doc, {"run_id", "through_step"}, name)
        through = _want(doc, "through_step", int, name)
        if through < 0:
            raise BadBody("RecordAck through_step must be >= 0")
        return RecordAck(_want(doc, "run_id", str, name), through)

    if cls is Bye:
        _no_extras(doc, {"node_id"}, name)
        return Bye(_want(doc, "node_id", str, name))

    if cls is Error:
        _no_extras(doc, {"code", "text"}, name)
        return Error(_want(doc, "code", str, name), _want(doc, "text", str, name))

    raise UnknownType(code)


def encode(msg: Message) -> bytes:
    """Serialize a message into one frame. Valid messages always encode."""
    body = canonical_bytes(_body_of(msg))
    return _HEADER.pack(2 + len(body), PROTOCOL_VERSION, MSG_TYPES[type(msg)]) + body


def decode(data: bytes) -> tuple[Message, int]:
    """Decode one frame from the front of ``data``.

    Returns (message, bytes_consumed). Raises NeedMoreBytes when the frame
    is incomplete (nothing consumed), or a typed ProtocolError otherwise.
    """
    if len(data) < 4:
        raise NeedMoreBytes()
    (length,) = struct.unpack_from(">I", data)
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge(length)
    total = 4 + length
    if len(data) < total:
        raise NeedMoreBytes()
    if length < 2:
        raise BadBody("frame too short to hold version and msg_type")
    version = data[4]
    if version != PROTOCOL_VERSION:
        raise BadVersion(version)
    code = data[5]
    if code not in _BY_CODE:
        raise UnknownType(code)
    try:
        doc = json.loads(data[6:total].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise BadBody(f"body is not valid JSON: {exc}") from None
    return _parse_body(code, doc), total


class FrameDecoder:
    """Incremental decoder over arbitrary chunk boundaries.

    Owned by exactly one reader. ``feed`` yields every complete frame in
    order; a frame that fails to decode yields its ProtocolError instead and
    the stream resynchronizes by skipping exactly that frame's declared
    length. Oversized frames are skipped without ever buffering their body.
    """

    def __init__(self):
        self._buf = bytearray()
        self._skip = 0

    def pending(self) -> int:
        return len(self._buf)

    def feed(self, chunk: bytes) -> list[Message | ProtocolError]:
        self._buf.extend(chunk)
        out: list[Message | ProtocolError] = []
        while True:
            if self._skip:
                drop = min(self._skip, len(self._buf))
                del self._buf[:drop]
                self._skip -= drop
                if self._skip:
                    return out
            if len(self._buf) < 4:
                return out
            (length,) = struct.unpack_from(">I", self._buf)
            if length > MAX_FRAME_BYTES:
                out.append(FrameTooLarge(length))
                del self._buf[:4]
                self._skip = length
                continue
            total = 4 + length
            if len(self._buf) < total:
                return out
            try:
                msg, consumed = decode(bytes(self._buf[:total]))
                out.append(msg)
                del self._buf[:consumed]
            except NeedMoreBytes:  # pragma: no cover - total bytes are present
                return out
            except ProtocolError as err:
                out.append(err)
                del self._buf[:total]

    def messages(self, chunk: bytes) -> Iterator[Message]:
        """feed() filtered to successfully decoded messages."""
        for item in self.feed(chunk):
            if not isinstance(item, ProtocolError):
                yield item


def encode_body_preview(msg: Message) -> str:
    """Canonical body text, for logs and debugging."""
    return canonical_dumps(_body_of(msg))
