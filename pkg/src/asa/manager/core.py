"""Authoritative run/node state machine behind a serialized transition queue.

Every mutation - node membership, run transitions, scheduling, record
ingest - executes on one core thread, so invariants are checkable from a
single totally-ordered transition log. Run state is written through to the
datastore on every transition; on restart, runs that were in flight are
treated like runs lost to a dead node (requeued while attempts remain).

Scheduling policy: PENDING runs FIFO by submission, assigned to the
least-loaded LIVE node, ties broken by lexicographic node id, never
exceeding any node's capacity. Heartbeats age nodes LIVE -> SUSPECT after
3 missed intervals and SUSPECT -> DEAD after 6; a dead node's runs are
rescheduled (attempts < 3) or failed.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable

from .. import protocol as P
from ..analysis import MetricSpec, analyze_runs, metric_set_hash, validate_metrics
from ..datastore import Datastore, UnknownId
from ..engine import ModelRegistry
from ..scenario import (
    BatchExpandError,
    ExecutionRequest,
    ScenarioTemplate,
    ValidationError,
    expand_batch,
    full_factorial,
    latin_hypercube,
    scenario_from_json,
    validate,
    validate_template,
)

logger = logging.getLogger("asa.manager")

TERMINAL_STATES = ("COMPLETED", "STOPPED", "FAILED")
MAX_ATTEMPTS = 3


class ManagerError(Exception):
    pass


class UnknownRun(ManagerError):
    pass


class UnknownTemplate(ManagerError):
    pass


class NotRoutable(ManagerError):
    pass


class IllegalTransition(ManagerError):
    pass


class ValidationFailed(ManagerError):
    def __init__(self, errors: list[ValidationError]):
        super().__init__("; ".join(f"{e.code} at {e.path}" for e in errors) or "validation failed")
        self.errors = errors


@dataclass
class NodeInfo:
    node_id: str
    capacity: int
    status: str = "LIVE"  # LIVE | SUSPECT | DEAD
    last_heartbeat: float = 0.0
    running: set[str] = field(default_factory=set)
    send: Callable[[P.Message], bool] | None = None

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "capacity": self.capacity,
            "status": self.status,
            "running": sorted(self.running),
            "last_heartbeat": self.last_heartbeat,
        }


@dataclass
class RunState:
    run_id: str
    request: ExecutionRequest
    state: str = "PENDING"
    node_id: str | None = None
    attempts: int = 0
    batch_id: str | None = None
    submitted_seq: int = 0
    detail: str = ""
    timestamps: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "state": self.state,
            "node_id": self.node_id,
            "attempts": self.attempts,
            "batch_id": self.batch_id,
            "detail": self.detail,
            "timestamps": self.timestamps,
            "request": self.request.to_json(),
        }


@dataclass
class Batch:
    batch_id: str
    template_id: str
    batch_seed: int
    bindings: list[dict]
    run_ids: list[str]

    def to_json(self) -> dict:
        return {
            "batch_id": self.batch_id,
            "template_id": self.template_id,
            "batch_seed": self.batch_seed,
            "bindings": self.bindings,
            "run_ids": self.run_ids,
        }


class ManagerCore:
    def __init__(
        self,
        store: Datastore,
        registry: ModelRegistry,
        heartbeat_interval: float = 2.0,
        suspect_after: int = 3,
        dead_after: int = 6,
    ):
        self.store = store
        self.registry = registry
        self.heartbeat_interval = heartbeat_interval
        self.suspect_after = suspect_after
        self.dead_after = dead_after

        self.nodes: dict[str, NodeInfo] = {}
        self.runs: dict[str, RunState] = {}
        self.batches: dict[str, Batch] = {}
        self.pending: list[str] = []  # run ids, FIFO by submitted_seq
        self.transition_log: list[dict] = []
        self._seq = 0
        self._subscribers: dict[str, list[queue.Queue]] = {}

        self._calls: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="manager-core", daemon=True)
        self._recover()

    # --- serialized execution -------------------------------------------------

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout=5)
        self.store.close()

    def call(self, fn: Callable[[], Any]) -> Any:
        """Run fn on the core thread and return its result (or raise)."""
        if threading.current_thread() is self._thread:
            return fn()
        box: queue.Queue = queue.Queue(maxsize=1)

        def wrapped():
            try:
                box.put((True, fn()))
            except Exception as exc:
                box.put((False, exc))

        self._calls.put(wrapped)
        ok, value = box.get()
        if not ok:
            raise value
        return value

    def _loop(self) -> None:
        tick_every = max(0.05, min(self.heartbeat_interval / 4, 0.5))
        next_tick = time.monotonic()
        while not self._stop.is_set():
            timeout = max(0.0, next_tick - time.monotonic())
            try:
                fn = self._calls.get(timeout=timeout)
            except queue.Empty:
                fn = None
            if fn is not None:
                try:
                    fn()
                except Exception:
                    logger.exception("core call failed")
            if time.monotonic() >= next_tick:
                try:
                    self._tick()
                except Exception:
                    logger.exception("tick failed")
                next_tick = time.monotonic() + tick_every

    # --- bootstrap -----------------------------------------------------------------

    def _recover(self) -> None:
        """Reload batches and runs; treat previously in-flight runs as lost."""
        for entry in self.store.list("batch"):
            doc = entry.body
            self.batches[doc["batch_id"]] = Batch(
                batch_id=doc["batch_id"],
                template_id=doc["template_id"],
                batch_seed=doc["batch_seed"],
                bindings=doc["bindings"],
                run_ids=doc["run_ids"],
            )
        recovered = []
        for entry in self.store.list("run"):
            doc = entry.body
            run = RunState(
                run_id=doc["run_id"],
                request=ExecutionRequest.from_json(doc["request"]),
                state=doc["state"],
                node_id=doc.get("node_id"),
                attempts=doc.get("attempts", 0),
                batch_id=doc.get("batch_id"),
                detail=doc.get("detail", ""),
                timestamps=doc.get("timestamps", {}),
            )
            recovered.append(run)
        recovered.sort(key=lambda r: r.timestamps.get("PENDING", 0.0))
        for run in recovered:
            self._seq += 1
            run.submitted_seq = self._seq
            self.runs[run.run_id] = run
            if run.state in ("ASSIGNED", "RUNNING", "PAUSED"):
                self._lose_run(run, "manager restart")
            elif run.state == "PENDING":
                self.pending.append(run.run_id)

    # --- transitions -----------------------------------------------------------------

    def _log(self, kind: str, id: str, from_state: str, to_state: str, detail: str = "") -> None:
        self.transition_log.append(
            {
                "ts": time.time(),
                "kind": kind,
                "id": id,
                "from": from_state,
                "to": to_state,
                "detail": detail,
                "running_assigned": sum(1 for r in self.runs.values() if r.state in ("ASSIGNED", "RUNNING")),
            }
        )

    def _persist_run(self, run: RunState) -> None:
        self.store.put("run", run.to_json(), id=run.run_id)

    def _set_run_state(self, run: RunState, state: str, detail: str = "") -> None:
        if run.state in TERMINAL_STATES:
            return  # terminal states are immutable
        old = run.state
        run.state = state
        run.detail = detail
        run.timestamps[state] = time.time()
        self._log("run", run.run_id, old, state, detail)
        self._persist_run(run)
        self._push_event(run.run_id, "run", run.to_json())
        if state in TERMINAL_STATES:
            if run.node_id and run.node_id in self.nodes:
                self.nodes[run.node_id].running.discard(run.run_id)
            if state == "COMPLETED":
                self.store.mark_run_complete(run.run_id, max(run.attempts, 1))

    def _lose_run(self, run: RunState, why: str) -> None:
        if run.state in TERMINAL_STATES:
            return
        run.node_id = None
        if run.attempts >= MAX_ATTEMPTS:
            self._set_run_state(run, "FAILED", f"node lost: {why} (attempts exhausted)")
        else:
            self._set_run_state(run, "PENDING", f"requeued: {why}")
            self.pending.append(run.run_id)
            self.pending.sort(key=lambda rid: self.runs[rid].submitted_seq)

    # --- node membership ----------------------------------------------------------------

    def node_hello(self, node_id: str, capacity: int, send: Callable[[P.Message], bool]) -> None:
        def fn():
            existing = self.nodes.get(node_id)
            if existing is None:
                self.nodes[node_id] = NodeInfo(
                    node_id=node_id, capacity=capacity, last_heartbeat=time.monotonic(), send=send
                )
                self._log("node", node_id, "NEW", "LIVE")
            else:
                old = existing.status
                existing.capacity = capacity
                existing.send = send
                existing.last_heartbeat = time.monotonic()
                if existing.status != "LIVE":
                    existing.status = "LIVE"
                    existing.running.clear()
                    self._log("node", node_id, old, "LIVE", "reconnected")
            self._schedule()

        self.call(fn)

    def node_heartbeat(self, node_id: str, running_ids: tuple[str, ...]) -> None:
        def fn():
            node = self.nodes.get(node_id)
            if node is None:
                return
            node.last_heartbeat = time.monotonic()
            if node.status == "SUSPECT":
                node.status = "LIVE"
                self._log("node", node_id, "SUSPECT", "LIVE", "heartbeat resumed")
                self._schedule()

        self.call(fn)

    def node_bye(self, node_id: str) -> None:
        def fn():
            node = self.nodes.get(node_id)
            if node is None:
                return
            old = node.status
            node.status = "DEAD"
            node.send = None
            self._log("node", node_id, old, "DEAD", "bye")
            self._on_node_dead(node)

        self.call(fn)

    def conn_lost(self, node_id: str) -> None:
        def fn():
            node = self.nodes.get(node_id)
            if node is not None:
                node.send = None  # status keeps aging via heartbeats

        self.call(fn)

    def _tick(self) -> None:
        now = time.monotonic()
        for node in self.nodes.values():
            age = now - node.last_heartbeat
            if node.status == "LIVE" and age > self.suspect_after * self.heartbeat_interval:
                node.status = "SUSPECT"
                self._log("node", node.node_id, "LIVE", "SUSPECT", f"no heartbeat {age:.1f}s")
            elif node.status == "SUSPECT" and age > self.dead_after * self.heartbeat_interval:
                node.status = "DEAD"
                self._log("node", node.node_id, "SUSPECT", "DEAD", f"no heartbeat {age:.1f}s")
                self._on_node_dead(node)
        self._schedule()

    def _on_node_dead(self, node: NodeInfo) -> None:
        lost = sorted(node.running)
        node.running.clear()
        for run_id in lost:
            run = self.runs.get(run_id)
            if run is not None:
                self._lose_run(run, f"node {node.node_id} dead")
        self._schedule()

    # --- scheduling ------------------------------------------------------------------------

    def _free_slots(self, node: NodeInfo) -> int:
        return node.capacity - len(node.running)

    def _schedule(self) -> None:
        if not self.pending:
            return
        assigned_any = True
        while self.pending and assigned_any:
            assigned_any = False
            candidates = [
                n for n in self.nodes.values() if n.status == "LIVE" and n.send is not None and self._free_slots(n) > 0
            ]
            if not candidates:
                return
            candidates.sort(key=lambda n: (len(n.running), n.node_id))
            node = candidates[0]
            run_id = self.pending.pop(0)
            run = self.runs.get(run_id)
            if run is None or run.state != "PENDING":
                assigned_any = True  # consumed a stale entry, keep draining
                continue
            run.attempts += 1
            run.node_id = node.node_id
            node.running.add(run_id)
            self._set_run_state(run, "ASSIGNED", f"to {node.node_id}")
            ok = node.send(P.Assign(run.request.to_json()))
            if not ok:
                node.send = None
                run.attempts -= 1
                self._lose_run(run, f"send to {node.node_id} failed")
                continue
            assigned_any = True

    def assign_ack(self, node_id: str, run_id: str, accepted: bool, reason: str) -> None:
        def fn():
            run = self.runs.get(run_id)
            node = self.nodes.get(node_id)
            if run is None:
                return
            if not accepted:
                if node is not None:
                    node.running.discard(run_id)
                run.attempts = max(0, run.attempts - 1)  # declined, not a lost execution
                run.node_id = None
                if run.state == "ASSIGNED":
                    self._set_run_state(run, "PENDING", f"declined by {node_id}: {reason}")
                    self.pending.append(run_id)
                    self.pending.sort(key=lambda rid: self.runs[rid].submitted_seq)
                self._schedule()

        self.call(fn)

    def run_state_change(self, node_id: str, run_id: str, state: str, detail: str) -> None:
        def fn():
            run = self.runs.get(run_id)
            if run is None or run.node_id != node_id:
                return
            if state in ("RUNNING", "PAUSED") or state in TERMINAL_STATES:
                self._set_run_state(run, state, detail)
            if state in TERMINAL_STATES:
                self._schedule()

        self.call(fn)

    def record_batch(self, node_id: str, run_id: str, records: tuple[dict, ...]) -> int | None:
        def fn():
            run = self.runs.get(run_id)
            if run is None or run.node_id != node_id or run.attempts < 1:
                return None  # not the authoritative owner: no ack
            through = self.store.append_records(run_id, run.attempts, list(records))
            positions = [r for r in records if r["tag"] == "position"]
            if positions:
                self._push_event(run_id, "records", positions)
            return through

        return self.call(fn)

    # --- batches and control ---------------------------------------------------------------------

    def add_scenario(self, doc: dict, id: str | None = None) -> dict:
        spec = scenario_from_json(doc)
        errors = validate(spec, self.registry.manifests())
        if errors:
            raise ValidationFailed(errors)
        entry = self.store.put("scenario", spec.to_json(), id=id)
        return {"id": entry.id, "revision": entry.revision}

    def add_template(self, doc: dict, id: str | None = None) -> dict:
        template = ScenarioTemplate.from_json(doc)
        errors = validate(template.base, self.registry.manifests()) + validate_template(template)
        if errors:
            raise ValidationFailed(errors)
        entry = self.store.put("template", template.to_json(), id=id)
        return {"id": entry.id, "revision": entry.revision}

    def submit_batch(
        self,
        template_id: str,
        batch_seed: int,
        bindings: list[dict] | None = None,
        doe: dict | None = None,
    ) -> Batch:
        def fn():
            try:
                entry = self.store.get("template", template_id)
            except UnknownId:
                raise UnknownTemplate(template_id) from None
            template = ScenarioTemplate.from_json(entry.body)
            if doe is not None:
                binds = self._materialize_doe(doe)
            elif bindings is not None:
                binds = bindings
            else:
                raise ValidationFailed([ValidationError("missing_bindings", "batch", "bindings or doe required")])
            batch_id = uuid.uuid4().hex[:12]
            try:
                requests = expand_batch(template, binds, batch_seed, batch_id=batch_id)
            except BatchExpandError as exc:
                raise ValidationFailed(
                    [ValidationError("bad_binding", f"bindings[{exc.index}]", str(exc.cause))]
                ) from None
            batch = Batch(
                batch_id=batch_id,
                template_id=template_id,
                batch_seed=batch_seed,
                bindings=[dict(b) for b in binds],
                run_ids=[r.request_id for r in requests],
            )
            self.batches[batch_id] = batch
            self.store.put("batch", batch.to_json(), id=batch_id)
            for request in requests:
                self._seq += 1
                run = RunState(
                    run_id=request.request_id,
                    request=request,
                    batch_id=batch_id,
                    submitted_seq=self._seq,
                )
                run.timestamps["PENDING"] = time.time()
                self.runs[run.run_id] = run
                self._log("run", run.run_id, "NEW", "PENDING")
                self._persist_run(run)
                self.pending.append(run.run_id)
            self.pending.sort(key=lambda rid: self.runs[rid].submitted_seq)
            self._schedule()
            return batch

        return self.call(fn)

    @staticmethod
    def _materialize_doe(doe: dict) -> list[dict]:
        kind = doe.get("kind")
        if kind == "full_factorial":
            return full_factorial(doe["factors"])
        if kind == "latin_hypercube":
            ranges = {k: tuple(v) for k, v in doe["ranges"].items()}
            return latin_hypercube(int(doe["n"]), ranges, int(doe["seed"]))
        raise ValidationFailed([ValidationError("bad_doe", "doe.kind", f"unknown design {kind!r}")])

    def route_control(self, run_id: str, command: P.ControlCommand) -> dict:
        def fn():
            run = self.runs.get(run_id)
            if run is None:
                raise UnknownRun(run_id)
            if run.state == "PENDING":
                if command.kind == "stop":
                    if run_id in self.pending:
                        self.pending.remove(run_id)
                    self._set_run_state(run, "STOPPED", "stopped before scheduling")
                    return run.to_json()
                raise IllegalTransition(f"{command.kind} on PENDING run")
            if run.state in TERMINAL_STATES:
                raise IllegalTransition(f"{command.kind} on {run.state} run")
            if command.kind == "pause" and run.state != "RUNNING":
                raise IllegalTransition(f"pause while {run.state}")
            if command.kind == "resume" and run.state != "PAUSED":
                raise IllegalTransition(f"resume while {run.state}")
            if command.kind == "play" and run.state != "ASSIGNED":
                raise IllegalTransition(f"play while {run.state}")
            node = self.nodes.get(run.node_id or "")
            if node is None or node.status != "LIVE" or node.send is None:
                raise NotRoutable(f"run {run_id} is on node {run.node_id} ({node.status if node else 'gone'})")
            if not node.send(P.Control(run_id, command)):
                raise NotRoutable(f"send to node {run.node_id} failed")
            return run.to_json()

        return self.call(fn)

    # --- analysis ---------------------------------------------------------------------------------

    def analyze_batch(self, batch_id: str, specs: list[MetricSpec]) -> dict:
        def fn():
            batch = self.batches.get(batch_id)
            if batch is None:
                raise UnknownRun(f"batch {batch_id}")
            return batch

        batch = self.call(fn)
        warnings_list = validate_metrics(specs, self.registry.manifests())

        def per_run():
            for index, run_id in enumerate(batch.run_ids):
                bindings = batch.bindings[index] if index < len(batch.bindings) else {}
                try:
                    records = list(self.store.read_records(run_id))
                except UnknownId:
                    records = []
                yield index, bindings, records

        summary = analyze_runs(per_run(), specs)
        analysis_id = f"{batch_id}-{metric_set_hash(specs)}"
        doc = {
            "analysis_id": analysis_id,
            "batch_id": batch_id,
            "metrics": [s.to_json() for s in specs],
            "summary": summary.to_json(),
            "warnings": warnings_list,
        }
        self.store.put("analysis", doc, id=analysis_id)
        return doc

    # --- reads and streams ----------------------------------------------------------------------------

    def get_run(self, run_id: str) -> dict:
        def fn():
            run = self.runs.get(run_id)
            if run is None:
                raise UnknownRun(run_id)
            return run.to_json()

        return self.call(fn)

    def list_runs(self, batch_id: str | None = None, state: str | None = None) -> list[dict]:
        def fn():
            out = []
            for run in sorted(self.runs.values(), key=lambda r: r.submitted_seq):
                if batch_id is not None and run.batch_id != batch_id:
                    continue
                if state is not None and run.state != state:
                    continue
                out.append(run.to_json())
            return out

        return self.call(fn)

    def rollup(self, batch: Batch) -> dict:
        counts: dict[str, int] = {}
        for run_id in batch.run_ids:
            run = self.runs.get(run_id)
            state = run.state if run is not None else "UNKNOWN"
            counts[state] = counts.get(state, 0) + 1
        return counts

    def get_batch(self, batch_id: str) -> dict:
        def fn():
            batch = self.batches.get(batch_id)
            if batch is None:
                raise UnknownRun(f"batch {batch_id}")
            doc = batch.to_json()
            doc["rollup"] = self.rollup(batch)
            return doc

        return self.call(fn)

    def list_batches(self) -> list[dict]:
        def fn():
            out = []
            for batch_id in sorted(self.batches):
                doc = self.batches[batch_id].to_json()
                doc["rollup"] = self.rollup(self.batches[batch_id])
                out.append(doc)
            return out

        return self.call(fn)

    def list_nodes(self) -> list[dict]:
        def fn():
            return [self.nodes[nid].to_json() for nid in sorted(self.nodes)]

        return self.call(fn)

    def snapshot_transitions(self) -> list[dict]:
        return self.call(lambda: list(self.transition_log))

    # --- live event streams -------------------------------------------------------------------------

    def _push_event(self, run_id: str, kind: str, payload) -> None:
        for sub in self._subscribers.get(run_id, []):
            try:
                sub.put_nowait((kind, payload))
            except queue.Full:
                pass

    def subscribe(self, run_id: str) -> queue.Queue:
        def fn():
            run = self.runs.get(run_id)
            if run is None:
                raise UnknownRun(run_id)
            sub: queue.Queue = queue.Queue(maxsize=10000)
            self._subscribers.setdefault(run_id, []).append(sub)
            sub.put_nowait(("run", run.to_json()))
            return sub

        return self.call(fn)

    def unsubscribe(self, run_id: str, sub: queue.Queue) -> None:
        def fn():
            subs = self._subscribers.get(run_id, [])
            if sub in subs:
                subs.remove(sub)

        self.call(fn)
