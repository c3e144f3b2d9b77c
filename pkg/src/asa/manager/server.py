"""Manager daemons: the node-facing TCP listener and process entry point.

CLI: asa-manager --listen :4810 --http :8080 --data DIR [--ext-dir PATH]
"""

from __future__ import annotations

import argparse
import logging
import socket
import socketserver
import threading

from .. import protocol as P
from ..datastore import Datastore
from ..engine import builtin_registry
from .api import ApiServer
from .core import ManagerCore

logger = logging.getLogger("asa.manager.server")


class NodeLink(socketserver.BaseRequestHandler):
    """One connected worker: decode frames, feed the core, carry replies."""

    def setup(self):
        self.node_id: str | None = None
        self.core: ManagerCore = self.server.core
        self._send_lock = threading.Lock()
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, msg: P.Message) -> bool:
        data = P.encode(msg)
        with self._send_lock:
            try:
                self.request.sendall(data)
                return True
            except OSError:
                return False

    def handle(self):
        decoder = P.FrameDecoder()
        while True:
            try:
                chunk = self.request.recv(65536)
            except OSError:
                break
            if not chunk:
                break
            for item in decoder.feed(chunk):
                if isinstance(item, P.ProtocolError):
                    logger.warning("protocol error from %s: %s", self.node_id or self.client_address, item)
                    self.send(P.Error("protocol", str(item)))
                    continue
                try:
                    self._dispatch(item)
                except Exception:
                    logger.exception("dispatch failed")

    def _dispatch(self, msg: P.Message) -> None:
        if isinstance(msg, P.Hello):
            self.node_id = msg.node_id
            self.core.node_hello(msg.node_id, msg.capacity, self.send)
        elif isinstance(msg, P.Heartbeat):
            self.core.node_heartbeat(msg.node_id, msg.running_run_ids)
        elif isinstance(msg, P.AssignAck):
            if self.node_id:
                self.core.assign_ack(self.node_id, msg.run_id, msg.accepted, msg.reason)
        elif isinstance(msg, P.RunStateChange):
            if self.node_id:
                self.core.run_state_change(self.node_id, msg.run_id, msg.state, msg.detail)
        elif isinstance(msg, P.RecordBatch):
            if self.node_id:
                through = self.core.record_batch(self.node_id, msg.run_id, msg.records)
                if through is not None:
                    self.send(P.RecordAck(msg.run_id, through))
        elif isinstance(msg, P.Bye):
            self.core.node_bye(msg.node_id)
        elif isinstance(msg, P.Error):
            logger.warning("node %s error: %s %s", self.node_id, msg.code, msg.text)

    def finish(self):
        if self.node_id:
            self.core.conn_lost(self.node_id)


class NodeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, core: ManagerCore):
        self.core = core
        super().__init__(addr, NodeLink)


class Manager:
    """Everything a manager process runs: core, node listener, HTTP API."""

    def __init__(
        self,
        data_dir,
        listen=("127.0.0.1", P.DEFAULT_PORT),
        http=("127.0.0.1", 8080),
        ext_dirs=(),
        heartbeat_interval: float = 2.0,
        ui_dir=None,
    ):
        self.store = Datastore(data_dir)
        self.registry = builtin_registry(ext_dirs)
        self.core = ManagerCore(self.store, self.registry, heartbeat_interval=heartbeat_interval)
        self.node_server = NodeServer(listen, self.core)
        self.api = ApiServer(http, self.core, self.store, ui_dir=ui_dir)
        self._threads: list[threading.Thread] = []

    @property
    def node_port(self) -> int:
        return self.node_server.server_address[1]

    @property
    def http_port(self) -> int:
        return self.api.server_address[1]

    def start(self) -> None:
        self.core.start()
        for name, target in (("manager-tcp", self.node_server.serve_forever), ("manager-http", self.api.serve_forever)):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        logger.info("manager up: tcp=%s http=%s", self.node_server.server_address, self.api.server_address)

    def stop(self) -> None:
        self.node_server.shutdown()
        self.api.shutdown()
        self.node_server.server_close()
        self.api.server_close()
        self.core.stop()


def _parse_listen(text: str, default_port: int) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return (host or "0.0.0.0", int(port) if port else default_port)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="asa-manager", description="simulation cluster manager")
    parser.add_argument("--listen", default=":4810", help="node protocol HOST:PORT")
    parser.add_argument("--http", default=":8080", help="HTTP API HOST:PORT")
    parser.add_argument("--data", required=True, help="data directory")
    parser.add_argument("--ext-dir", action="append", default=[], help="extension directory (repeatable)")
    parser.add_argument("--heartbeat", type=float, default=2.0, help="expected node heartbeat interval seconds")
    parser.add_argument("--ui", default=None, help="directory of dashboard static assets (served at /ui)")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    manager = Manager(
        data_dir=args.data,
        listen=_parse_listen(args.listen, P.DEFAULT_PORT),
        http=_parse_listen(args.http, 8080),
        ext_dirs=tuple(args.ext_dir),
        heartbeat_interval=args.heartbeat,
        ui_dir=args.ui,
    )
    manager.start()
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        manager.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
