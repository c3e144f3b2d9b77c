"""Worker daemon: cluster membership, run execution, record streaming.

One process plays both worker-side roles: the handler half keeps the
manager connection alive (hello, heartbeats, assignment acks, reconnect
with exponential backoff) and the runner half executes assigned runs on
their own threads, obeying speed control and streaming record batches
upstream. Records stay buffered until the manager acknowledges them, so a
link outage costs nothing: on reconnect the node retransmits everything
past the last ack and the datastore's idempotent ingest drops overlaps.

CLI: asa-node --manager HOST:PORT --id NODE_ID --capacity N --ext-dir PATH
(the ASA_MANAGER environment variable overrides --manager).
"""

from __future__ import annotations

import argparse
import logging
import os
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

from . import protocol as P
from .engine import ModelRegistry, builtin_registry, run_simulation
from .scenario import ExecutionRequest

logger = logging.getLogger("asa.node")

RECORD_FLUSH_STEPS = 50
BUFFER_LIMIT_BYTES = 64 * 1024 * 1024

PHASES = ("INITIALIZING", "RUNNING", "PAUSED", "STOPPING", "DONE")
_PHASE_EDGES = {
    ("INITIALIZING", "RUNNING"),
    ("RUNNING", "PAUSED"),
    ("PAUSED", "RUNNING"),
    ("RUNNING", "STOPPING"),
    ("PAUSED", "STOPPING"),
    ("STOPPING", "DONE"),
    ("RUNNING", "DONE"),
}


@dataclass
class NodeConfig:
    node_id: str
    manager_host: str = "127.0.0.1"
    manager_port: int = P.DEFAULT_PORT
    capacity: int = 1
    heartbeat_interval: float = 2.0
    extension_dirs: tuple[str, ...] = ()
    reconnect_base_s: float = 1.0
    reconnect_cap_s: float = 30.0
    record_flush_steps: int = RECORD_FLUSH_STEPS
    buffer_limit_bytes: int = BUFFER_LIMIT_BYTES

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.heartbeat_interval <= 0:
            raise ValueError("heartbeat_interval must be > 0")


def pace(speed_factor: float, step_dt: float, steps_done: int, elapsed_wall: float) -> float:
    """Wall-clock wait before releasing the next step.

    Factor 0 runs unconstrained. Factor f > 0 releases step k+1 once
    f * elapsed reaches (k+1) * step_dt, measured against the run's start
    epoch so per-step jitter never accumulates.
    """
    if speed_factor <= 0:
        return 0.0
    target = (steps_done + 1) * step_dt / speed_factor
    return max(0.0, target - elapsed_wall)


class Pacer:
    """Stateful wrapper around pace(): owns the epoch and the live factor."""

    def __init__(self, step_dt: float, factor: float = 0.0, sleep=time.sleep):
        self.step_dt = step_dt
        self.factor = factor
        self._sleep = sleep
        self._epoch = time.monotonic()
        self._last_step = 0

    def __call__(self, steps_done: int) -> None:
        self._last_step = steps_done
        wait = pace(self.factor, self.step_dt, steps_done, time.monotonic() - self._epoch)
        if wait > 0:
            self._sleep(wait)

    def set_factor(self, factor: float) -> None:
        self.factor = factor
        self.rebase()

    def rebase(self) -> None:
        """Re-anchor the epoch at the current sim position: no catch-up burst."""
        if self.factor > 0:
            # the last paced step was released, so the run sits at last_step+1
            self._epoch = time.monotonic() - (self._last_step + 1) * self.step_dt / self.factor


class IllegalTransition(Exception):
    pass


class RunWorker:
    """One assigned run: engine thread plus its control/record plumbing."""

    def __init__(self, daemon: "NodeDaemon", request: ExecutionRequest):
        self.daemon = daemon
        self.request = request
        self.run_id = request.request_id
        self.phase = "INITIALIZING"
        self.speed_factor = 0.0
        self.commands: queue.Queue = queue.Queue()
        self.pacer = Pacer(request.scenario.sim.step_dt, self.speed_factor)
        self._self_paused = False
        self._buffered: list[dict] = []
        self._last_flush_step = -1
        self._kill = False
        self.thread = threading.Thread(target=self._run, name=f"run-{self.run_id}", daemon=True)

    # --- control ------------------------------------------------------------

    def _set_phase(self, phase: str, detail: str = "") -> None:
        if phase == self.phase:
            return
        self.phase = phase
        if phase in ("RUNNING", "PAUSED"):
            self.daemon.send(P.RunStateChange(self.run_id, phase, detail))

    def apply_control(self, command: P.ControlCommand) -> None:
        """Validate against the phase machine, then hand to the engine loop."""
        kind = command.kind
        if kind == "play":
            if self.phase != "INITIALIZING":
                raise IllegalTransition(f"play while {self.phase}")
            return  # assignment already starts the run
        if kind == "pause":
            if self.phase != "RUNNING":
                raise IllegalTransition(f"pause while {self.phase}")
        elif kind == "resume":
            if self.phase != "PAUSED":
                raise IllegalTransition(f"resume while {self.phase}")
        elif kind == "stop":
            if self.phase in ("STOPPING", "DONE"):
                raise IllegalTransition(f"stop while {self.phase}")
        elif kind == "set_speed":
            if self.phase == "DONE":
                raise IllegalTransition("set_speed after completion")
            self.speed_factor = command.factor
        self.commands.put(command)

    def kill(self) -> None:
        """Abrupt abandonment (crash simulation): no flush, no state change."""
        self._kill = True
        self.commands.put(P.ControlCommand.stop())

    # --- engine plumbing -------------------------------------------------------

    def _control_source(self):
        out = []
        if self._kill:
            raise SystemExit("killed")
        buffered = self.daemon.outbox_bytes(self.run_id)
        if not self._self_paused and buffered > self.daemon.config.buffer_limit_bytes:
            self._self_paused = True
            out.append(P.ControlCommand.pause())
        elif self._self_paused and buffered < self.daemon.config.buffer_limit_bytes // 2:
            self._self_paused = False
            out.append(P.ControlCommand.resume())
            self.pacer.rebase()
        while True:
            try:
                cmd = self.commands.get_nowait()
            except queue.Empty:
                break
            if cmd.kind == "pause":
                self._set_phase("PAUSED")
            elif cmd.kind == "resume":
                self._set_phase("RUNNING")
                self.pacer.rebase()
            elif cmd.kind == "stop":
                self._set_phase("STOPPING")
            elif cmd.kind == "set_speed":
                self.pacer.set_factor(cmd.factor)
                continue
            out.append(cmd)
        return out

    def _sink(self, records: list[dict]) -> None:
        if self._kill:
            raise SystemExit("killed")
        if not records:
            return
        self._buffered.extend(records)
        step = records[-1]["step"]
        if step - self._last_flush_step >= self.daemon.config.record_flush_steps:
            self._flush(step)

    def _flush(self, step: int) -> None:
        if not self._buffered:
            return
        batch = P.RecordBatch(self.run_id, tuple(self._buffered))
        self._buffered = []
        self._last_flush_step = step
        self.daemon.send_records(self.run_id, step, batch)

    def _run(self) -> None:
        try:
            self._set_phase("RUNNING")
            outcome = run_simulation(
                self.request.scenario,
                self.daemon.registry,
                self._sink,
                control=self._control_source,
                pacer=self.pacer,
                run_id=self.run_id,
                seed=self.request.seed,
            )
        except SystemExit:
            self.daemon.forget_run(self.run_id)
            return
        except Exception as exc:  # defensive: engine contracts say this cannot happen
            logger.exception("run %s crashed", self.run_id)
            outcome = None
            self.daemon.send(P.RunStateChange(self.run_id, "FAILED", f"worker crash: {exc}"))
        if outcome is not None:
            self._flush(step=self._last_flush_step + self.daemon.config.record_flush_steps)
            self.daemon.send(P.RunStateChange(self.run_id, outcome.state, outcome.reason))
        self.phase = "DONE"
        self.daemon.forget_run(self.run_id)


class NodeDaemon:
    """Manager link plus the set of active run workers."""

    def __init__(self, config: NodeConfig, registry: ModelRegistry | None = None):
        self.config = config
        self.registry = registry or builtin_registry(config.extension_dirs)
        self.runs: dict[str, RunWorker] = {}
        self._runs_lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._send_lock = threading.Lock()
        self._outbox: dict[str, list[tuple[int, P.RecordBatch]]] = {}
        self._outbox_bytes: dict[str, int] = {}
        self._outbox_lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.connected = threading.Event()

    # --- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        t = threading.Thread(target=self._conn_loop, name="node-conn", daemon=True)
        t.start()
        self._threads.append(t)
        hb = threading.Thread(target=self._heartbeat_loop, name="node-heartbeat", daemon=True)
        hb.start()
        self._threads.append(hb)

    def run_forever(self) -> None:
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            self.stop()

    def stop(self) -> None:
        """Graceful: stop runs, say Bye, drop the link."""
        with self._runs_lock:
            workers = list(self.runs.values())
        for worker in workers:
            try:
                worker.apply_control(P.ControlCommand.stop())
            except IllegalTransition:
                pass
        for worker in workers:
            worker.thread.join(timeout=10)
        self.send(P.Bye(self.config.node_id))
        self._stop.set()
        self._close_socket()

    def kill(self) -> None:
        """Abrupt: abandon runs mid-flight and cut the link (tests only)."""
        self._stop.set()
        with self._runs_lock:
            for worker in self.runs.values():
                worker.kill()
        self._close_socket()

    def _close_socket(self) -> None:
        sock, self._sock = self._sock, None
        self.connected.clear()
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass

    # --- connection -----------------------------------------------------------------

    def _conn_loop(self) -> None:
        backoff = self.config.reconnect_base_s
        while not self._stop.is_set():
            try:
                sock = socket.create_connection(
                    (self.config.manager_host, self.config.manager_port), timeout=5.0
                )
            except OSError:
                self._stop.wait(backoff)
                backoff = min(backoff * 2, self.config.reconnect_cap_s)
                continue
            backoff = self.config.reconnect_base_s
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._sock = sock
            logger.info("connected to manager %s:%s", self.config.manager_host, self.config.manager_port)
            self.send(P.Hello(self.config.node_id, self.config.capacity))
            self.connected.set()
            self._retransmit()
            self._read_until_closed(sock)
            self._close_socket()

    def _read_until_closed(self, sock: socket.socket) -> None:
        decoder = P.FrameDecoder()
        while not self._stop.is_set():
            try:
                chunk = sock.recv(65536)
            except OSError:
                return
            if not chunk:
                return
            for item in decoder.feed(chunk):
                if isinstance(item, P.ProtocolError):
                    logger.warning("protocol error from manager: %s", item)
                    continue
                try:
                    self._dispatch(item)
                except Exception:
                    logger.exception("dispatch failed for %s", type(item).__name__)

    def send(self, msg: P.Message) -> bool:
        sock = self._sock
        if sock is None:
            return False
        data = P.encode(msg)
        with self._send_lock:
            try:
                sock.sendall(data)
                return True
            except OSError:
                self._close_socket()
                return False

    # --- record buffering ---------------------------------------------------------------

    def send_records(self, run_id: str, max_step: int, batch: P.RecordBatch) -> None:
        frame_len = len(P.encode(batch))
        with self._outbox_lock:
            self._outbox.setdefault(run_id, []).append((max_step, batch))
            self._outbox_bytes[run_id] = self._outbox_bytes.get(run_id, 0) + frame_len
        self.send(batch)

    def outbox_bytes(self, run_id: str) -> int:
        with self._outbox_lock:
            return self._outbox_bytes.get(run_id, 0)

    def _on_record_ack(self, ack: P.RecordAck) -> None:
        with self._outbox_lock:
            pending = self._outbox.get(ack.run_id, [])
            keep = []
            freed = 0
            for max_step, batch in pending:
                if max_step <= ack.through_step:
                    freed += len(P.encode(batch))
                else:
                    keep.append((max_step, batch))
            self._outbox[ack.run_id] = keep
            if freed:
                self._outbox_bytes[ack.run_id] = max(0, self._outbox_bytes.get(ack.run_id, 0) - freed)

    def _retransmit(self) -> None:
        with self._outbox_lock:
            pending = [batch for batches in self._outbox.values() for _, batch in batches]
        for batch in pending:
            self.send(batch)

    # --- dispatch ------------------------------------------------------------------------

    def _dispatch(self, msg: P.Message) -> None:
        if isinstance(msg, P.Assign):
            self._on_assign(msg)
        elif isinstance(msg, P.Control):
            self._on_control(msg)
        elif isinstance(msg, P.RecordAck):
            self._on_record_ack(msg)
        elif isinstance(msg, P.Error):
            logger.warning("manager error: %s %s", msg.code, msg.text)

    def _on_assign(self, msg: P.Assign) -> None:
        try:
            request = ExecutionRequest.from_json(msg.execution_request)
        except Exception as exc:
            run_id = str(msg.execution_request.get("request_id", "?"))
            self.send(P.AssignAck(run_id, False, f"malformed request: {exc}"))
            return
        with self._runs_lock:
            if len(self.runs) >= self.config.capacity:
                self.send(P.AssignAck(request.request_id, False, "capacity"))
                return
            if request.request_id in self.runs:
                self.send(P.AssignAck(request.request_id, False, "duplicate run"))
                return
            worker = RunWorker(self, request)
            self.runs[request.request_id] = worker
        self.send(P.AssignAck(request.request_id, True, ""))
        worker.thread.start()

    def _on_control(self, msg: P.Control) -> None:
        with self._runs_lock:
            worker = self.runs.get(msg.run_id)
        if worker is None:
            self.send(P.Error("unknown_run", msg.run_id))
            return
        try:
            worker.apply_control(msg.command)
        except IllegalTransition as exc:
            self.send(P.Error("illegal_transition", f"{msg.run_id}: {exc}"))

    def forget_run(self, run_id: str) -> None:
        with self._runs_lock:
            self.runs.pop(run_id, None)

    def running_run_ids(self) -> list[str]:
        with self._runs_lock:
            return sorted(self.runs)

    def _heartbeat_loop(self) -> None:
        while not self._stop.is_set():
            if self.connected.is_set():
                self.send(P.Heartbeat(self.config.node_id, tuple(self.running_run_ids())))
            self._stop.wait(self.config.heartbeat_interval)


def _parse_hostport(text: str, default_port: int = P.DEFAULT_PORT) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host:
        host = "127.0.0.1"
    return host or "127.0.0.1", int(port) if port else default_port


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="asa-node", description="simulation worker daemon")
    parser.add_argument("--manager", default="127.0.0.1:4810", help="manager HOST:PORT")
    parser.add_argument("--id", required=True, dest="node_id", help="node id")
    parser.add_argument("--capacity", type=int, default=1, help="max concurrent runs")
    parser.add_argument("--ext-dir", action="append", default=[], help="extension directory (repeatable)")
    parser.add_argument("--heartbeat", type=float, default=2.0, help="heartbeat interval seconds")
    parser.add_argument("--reconnect-base", type=float, default=1.0, help="reconnect backoff base seconds")
    args = parser.parse_args(argv)

    manager = os.environ.get("ASA_MANAGER") or args.manager
    host, port = _parse_hostport(manager)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    config = NodeConfig(
        node_id=args.node_id,
        manager_host=host,
        manager_port=port,
        capacity=args.capacity,
        heartbeat_interval=args.heartbeat,
        extension_dirs=tuple(args.ext_dir),
        reconnect_base_s=args.reconnect_base,
    )
    NodeDaemon(config).run_forever()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
