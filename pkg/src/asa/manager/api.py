"""HTTP surface: CRUD, batches, run control, record reads, live streams.

All bodies are canonical JSON. Errors map to 404 (unknown id), 409
(illegal transition / unroutable), 422 (validation, every violation
listed). GET /runs/{id}/stream is a Server-Sent Events feed of run state
changes plus position-tag records; ?from_step= replays the stored tail
first so reconnecting clients stay gap-free. Static dashboard assets are
served under /ui when a directory is configured.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from ..analysis import AnalysisError, MetricSpec
from ..datastore import Datastore, UnknownId
from ..jsonutil import canonical_bytes
from ..protocol import BadBody, ControlCommand
from ..scenario import ScenarioError
from .core import (
    IllegalTransition,
    ManagerCore,
    NotRoutable,
    UnknownRun,
    UnknownTemplate,
    ValidationFailed,
)

logger = logging.getLogger("asa.manager.api")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}

_KIND_BY_ROUTE = {"scenarios": "scenario", "templates": "template"}


class ApiError(Exception):
    def __init__(self, status: int, payload: dict):
        super().__init__(payload.get("error", "error"))
        self.status = status
        self.payload = payload


class ApiHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "ApiServer"

    # --- plumbing -------------------------------------------------------------

    def log_message(self, fmt, *args):
        logger.debug("%s " + fmt, self.client_address[0], *args)

    @property
    def core(self) -> ManagerCore:
        return self.server.core

    @property
    def store(self) -> Datastore:
        return self.server.store

    def _json_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0) or 0)
        raw = self.rfile.read(length) if length else b"{}"
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            raise ApiError(422, {"error": "body is not valid JSON"})
        if not isinstance(doc, dict):
            raise ApiError(422, {"error": "body must be a JSON object"})
        return doc

    def _reply(self, status: int, payload) -> None:
        body = canonical_bytes(payload)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _route(self, method: str) -> None:
        parsed = urlparse(self.path)
        parts = [p for p in parsed.path.split("/") if p]
        query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
        try:
            handler = self._match(method, parts, query)
            if handler is None:
                raise ApiError(404, {"error": f"no route {method} {parsed.path}"})
            handler()
        except ApiError as exc:
            self._reply(exc.status, exc.payload)
        except (UnknownRun, UnknownTemplate, UnknownId) as exc:
            self._reply(404, {"error": str(exc)})
        except (IllegalTransition, NotRoutable) as exc:
            self._reply(409, {"error": str(exc)})
        except ValidationFailed as exc:
            self._reply(422, {"error": "validation failed", "violations": [e.to_json() for e in exc.errors]})
        except (ScenarioError, AnalysisError, BadBody) as exc:
            self._reply(422, {"error": str(exc)})
        except BrokenPipeError:
            pass
        except Exception as exc:
            logger.exception("internal error on %s %s", method, self.path)
            self._reply(500, {"error": f"internal: {exc}"})

    def do_GET(self):
        self._route("GET")

    def do_POST(self):
        self._route("POST")

    def do_PUT(self):
        self._route("PUT")

    def do_DELETE(self):
        self._route("DELETE")

    # --- routing table -----------------------------------------------------------

    def _match(self, method: str, parts: list[str], query: dict):
        if not parts:
            return lambda: self._reply(200, {"service": "asa-manager", "ui": "/ui/"})
        head = parts[0]

        if head in _KIND_BY_ROUTE:
            kind = _KIND_BY_ROUTE[head]
            if method == "POST" and len(parts) == 1:
                return lambda: self._catalog_add(kind, id=None)
            if method == "GET" and len(parts) == 1:
                return lambda: self._reply(
                    200, [{"id": e.id, "revision": e.revision, "body": e.body} for e in self.store.list(kind)]
                )
            if len(parts) == 2:
                id = parts[1]
                if method == "GET":
                    return lambda: self._catalog_get(kind, id)
                if method == "PUT":
                    return lambda: self._catalog_add(kind, id=id)
                if method == "DELETE":
                    return lambda: (self.store.delete(kind, id), self._reply(200, {"deleted": id}))[-1]
            return None

        if head == "batches":
            if method == "POST" and len(parts) == 1:
                return self._submit_batch
            if method == "GET" and len(parts) == 1:
                return lambda: self._reply(200, self.core.list_batches())
            if method == "GET" and len(parts) == 2:
                return lambda: self._reply(200, self.core.get_batch(parts[1]))
            return None

        if head == "runs":
            if method == "GET" and len(parts) == 1:
                return lambda: self._reply(200, self.core.list_runs(query.get("batch"), query.get("state")))
            if len(parts) >= 2:
                run_id = parts[1]
                if method == "GET" and len(parts) == 2:
                    return lambda: self._reply(200, self.core.get_run(run_id))
                if method == "POST" and len(parts) == 3 and parts[2] == "control":
                    return lambda: self._control(run_id)
                if method == "GET" and len(parts) == 3 and parts[2] == "records":
                    return lambda: self._records(run_id, query)
                if method == "GET" and len(parts) == 3 and parts[2] == "stream":
                    return lambda: self._stream(run_id, query)
            return None

        if head == "nodes" and method == "GET" and len(parts) == 1:
            return lambda: self._reply(200, self.core.list_nodes())

        if head == "analysis":
            if method == "POST" and len(parts) == 1:
                return self._analyze
            if method == "GET" and len(parts) == 2:
                return lambda: self._reply(200, self.store.get("analysis", parts[1]).body)
            return None

        if head == "ui":
            if method == "GET":
                return lambda: self._static(parts[1:])
            return None
        return None

    # --- catalog ---------------------------------------------------------------------

    def _catalog_add(self, kind: str, id: str | None) -> None:
        doc = self._json_body()
        if kind == "scenario":
            self._reply(200, self.core.add_scenario(doc, id=id))
        else:
            self._reply(200, self.core.add_template(doc, id=id))

    def _catalog_get(self, kind: str, id: str) -> None:
        entry = self.store.get(kind, id)
        self._reply(200, {"id": entry.id, "revision": entry.revision, "body": entry.body})

    # --- batches, control, records ------------------------------------------------------

    def _submit_batch(self) -> None:
        doc = self._json_body()
        if "template_id" not in doc:
            raise ApiError(422, {"error": "template_id required"})
        batch = self.core.submit_batch(
            template_id=doc["template_id"],
            batch_seed=int(doc.get("batch_seed", 0)),
            bindings=doc.get("bindings"),
            doe=doc.get("doe"),
        )
        payload = batch.to_json()
        payload["rollup"] = self.core.rollup(batch)
        self._reply(200, payload)

    def _control(self, run_id: str) -> None:
        doc = self._json_body()
        command = ControlCommand.from_json(doc)
        self._reply(200, self.core.route_control(run_id, command))

    def _records(self, run_id: str, query: dict) -> None:
        self.core.get_run(run_id)  # 404 for unknown runs even before records exist
        from_step = int(query["from_step"]) if "from_step" in query else None
        to_step = int(query["to_step"]) if "to_step" in query else None
        tag = query.get("tag")
        try:
            records = list(self.store.read_records(run_id, from_step=from_step, to_step=to_step, tag=tag))
        except UnknownId:
            records = []  # run exists but has produced nothing yet
        self._reply(200, records)

    def _analyze(self) -> None:
        doc = self._json_body()
        if "batch_id" not in doc or "metrics" not in doc:
            raise ApiError(422, {"error": "batch_id and metrics required"})
        specs = [MetricSpec.from_json(m) for m in doc["metrics"]]
        self._reply(200, self.core.analyze_batch(doc["batch_id"], specs))

    # --- SSE stream ------------------------------------------------------------------------

    def _stream(self, run_id: str, query: dict) -> None:
        replay = "from_step" in query
        from_step = int(query.get("from_step", 0))
        sub = self.core.subscribe(run_id)  # raises UnknownRun -> 404
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()

            last_step = from_step - 1
            # reconnecting clients pass from_step: replay the persisted tail
            # before going live so the sequence stays gap-free
            backlog = []
            if replay:
                try:
                    backlog = list(self.store.read_records(run_id, from_step=from_step, tag="position"))
                except UnknownId:
                    backlog = []
            if backlog:
                last_step = max(last_step, max(r["step"] for r in backlog))
                if not self._sse("records", backlog):
                    return
            while True:
                try:
                    kind, payload = sub.get(timeout=15.0)
                except queue.Empty:
                    if not self._sse_comment("keepalive"):
                        return
                    continue
                if kind == "records":
                    fresh = [r for r in payload if r["step"] > last_step]
                    if fresh:
                        last_step = max(r["step"] for r in fresh)
                        if not self._sse("records", fresh):
                            return
                elif kind == "run":
                    if not self._sse("run", payload):
                        return
                    if payload.get("state") in ("COMPLETED", "STOPPED", "FAILED"):
                        return
        finally:
            self.core.unsubscribe(run_id, sub)
            self.close_connection = True

    def _sse(self, event: str, payload) -> bool:
        data = b"event: " + event.encode() + b"\ndata: " + canonical_bytes(payload) + b"\n\n"
        try:
            self.wfile.write(data)
            self.wfile.flush()
            return True
        except OSError:
            return False

    def _sse_comment(self, text: str) -> bool:
        try:
            self.wfile.write(b": " + text.encode() + b"\n\n")
            self.wfile.flush()
            return True
        except OSError:
            return False

    # --- static assets -----------------------------------------------------------------------

    def _static(self, rel_parts: list[str]) -> None:
        ui_dir = self.server.ui_dir
        if ui_dir is None:
            raise ApiError(404, {"error": "no dashboard assets configured"})
        rel = "/".join(rel_parts) or "index.html"
        target = (ui_dir / rel).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            # single-page app: unknown paths fall through to the index
            target = (ui_dir / "index.html").resolve()
            if not target.is_file():
                raise ApiError(404, {"error": f"no asset {rel}"})
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class ApiServer(ThreadingHTTPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, core: ManagerCore, store: Datastore, ui_dir=None):
        self.core = core
        self.store = store
        self.ui_dir = Path(ui_dir) if ui_dir else None
        super().__init__(addr, ApiHandler)
