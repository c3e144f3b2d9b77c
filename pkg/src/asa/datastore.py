"""Durable storage: versioned catalog plus append-only per-run record logs.

On-disk layout (stable, readable by tooling in any language):

    data/
      catalog/<kind>/<id>.json            versioned envelope around the body
      runs/<run_id>/meta.json             {"completed_attempt": k}
      runs/<run_id>/<attempt>/records.jsonl   canonical record lines + crc32
      runs/<run_id>/<attempt>/index.json      step -> byte offset, every 1000 steps

Each record line is the canonical JSON of the record with an extra crc32
field computed over the record without it. Ingest is idempotent: a
re-delivered batch changes nothing, which is what makes record delivery
exactly-once in effect. Catalog deletes are tombstones so replay of a
deleted scenario's runs keeps working.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from .jsonutil import canonical_bytes, canonical_line

INDEX_EVERY_STEPS = 1000


class DatastoreError(Exception):
    pass


class UnknownId(DatastoreError):
    pass


class RevisionConflict(DatastoreError):
    pass


class OrderViolation(DatastoreError):
    pass


class CorruptLog(DatastoreError):
    pass


class StorageFull(DatastoreError):
    pass


@dataclass
class CatalogEntry:
    kind: str
    id: str
    revision: int
    body: Any
    created_at: str
    updated_at: str
    deleted: bool = False

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "id": self.id,
            "revision": self.revision,
            "body": self.body,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "deleted": self.deleted,
        }

    @staticmethod
    def from_json(doc: dict) -> "CatalogEntry":
        return CatalogEntry(
            kind=doc["kind"],
            id=doc["id"],
            revision=doc["revision"],
            body=doc["body"],
            created_at=doc["created_at"],
            updated_at=doc["updated_at"],
            deleted=doc.get("deleted", False),
        )


def record_crc(record: dict) -> int:
    return zlib.crc32(canonical_bytes(record))


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()) + f".{int(time.time() * 1e6) % 1_000_000:06d}Z"


class _LogWriter:
    """Single-writer append channel for one (run_id, attempt) log."""

    def __init__(self, log_path: Path, index_path: Path):
        self.log_path = log_path
        self.index_path = index_path
        self.lock = threading.Lock()
        self.last_key: tuple[int, str, str] | None = None
        self.through_step = -1
        self.offset = 0
        self.index: dict[int, int] = {}
        self._recover()
        self._fh = open(self.log_path, "ab")

    def _recover(self) -> None:
        if not self.log_path.exists():
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            self.log_path.touch()
            return
        raw = self.log_path.read_bytes()
        valid_end = 0
        pos = 0
        bad_middle = False
        while pos < len(raw):
            nl = raw.find(b"\n", pos)
            if nl < 0:
                break  # trailing partial line: drop it
            line = raw[pos:nl]
            record = _parse_checked_line(line)
            if record is None:
                # a corrupt line with data after it means real damage
                if raw.find(b"\n", nl + 1) >= 0 or nl + 1 < len(raw):
                    bad_middle = True
                break
            self._note(record, valid_end)
            valid_end = nl + 1
            pos = nl + 1
        if bad_middle:
            quarantine = self.log_path.with_suffix(".jsonl.quarantine")
            self.log_path.rename(quarantine)
            raise CorruptLog(f"{self.log_path}: corrupt line mid-log, quarantined to {quarantine}")
        if valid_end < len(raw):
            with open(self.log_path, "r+b") as fh:
                fh.truncate(valid_end)
        self.offset = valid_end

    def _note(self, record: dict, offset: int) -> None:
        step = record["step"]
        boundary = (step // INDEX_EVERY_STEPS) * INDEX_EVERY_STEPS
        if boundary not in self.index:
            self.index[boundary] = offset
        self.last_key = (step, record["agent_id"], record["tag"])
        if step > self.through_step:
            self.through_step = step

    def append(self, records: list[dict]) -> int:
        with self.lock:
            prev = None
            for rec in records:
                key = (rec["step"], rec["agent_id"], rec["tag"])
                if prev is not None and key <= prev:
                    raise OrderViolation(f"batch not strictly ordered at {key}")
                prev = key
            payload = bytearray()
            pending_notes = []
            offset = self.offset
            for rec in records:
                key = (rec["step"], rec["agent_id"], rec["tag"])
                if self.last_key is not None and key <= self.last_key:
                    continue  # idempotent re-delivery
                line = canonical_line({**rec, "crc32": record_crc(rec)})
                pending_notes.append((rec, offset))
                payload.extend(line)
                offset += len(line)
                self.last_key = key
                if rec["step"] > self.through_step:
                    self.through_step = rec["step"]
            if payload:
                try:
                    self._fh.write(payload)
                    self._fh.flush()
                except OSError as exc:
                    raise StorageFull(f"append to {self.log_path} failed: {exc}") from None
                for rec, off in pending_notes:
                    boundary = (rec["step"] // INDEX_EVERY_STEPS) * INDEX_EVERY_STEPS
                    if boundary not in self.index:
                        self.index[boundary] = off
                self.offset = offset
                tmp = self.index_path.with_suffix(".json.tmp")
                tmp.write_bytes(canonical_bytes({str(k): v for k, v in sorted(self.index.items())}))
                tmp.replace(self.index_path)
            return self.through_step

    def close(self) -> None:
        with self.lock:
            self._fh.close()


def _parse_checked_line(line: bytes) -> dict | None:
    try:
        doc = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, ValueError):
        return None
    if not isinstance(doc, dict) or "crc32" not in doc:
        return None
    crc = doc.pop("crc32")
    if record_crc(doc) != crc:
        return None
    return doc


class Datastore:
    """One data directory: catalog CRUD plus record log append/read."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "catalog").mkdir(parents=True, exist_ok=True)
        (self.root / "runs").mkdir(parents=True, exist_ok=True)
        self._writers: dict[tuple[str, int], _LogWriter] = {}
        self._writers_lock = threading.Lock()
        self._catalog_lock = threading.Lock()

    # --- catalog -------------------------------------------------------------

    def _entry_path(self, kind: str, id: str) -> Path:
        return self.root / "catalog" / kind / f"{id}.json"

    def _read_entry(self, kind: str, id: str) -> CatalogEntry | None:
        path = self._entry_path(kind, id)
        if not path.exists():
            return None
        return CatalogEntry.from_json(json.loads(path.read_text(encoding="utf-8")))

    def put(
        self, kind: str, body: Any, id: str | None = None, expect_revision: int | None = None
    ) -> CatalogEntry:
        """Create or update; bumps revision. CAS via expect_revision."""
        with self._catalog_lock:
            if id is None:
                id = uuid.uuid4().hex[:12]
            existing = self._read_entry(kind, id)
            if expect_revision is not None:
                current = existing.revision if existing and not existing.deleted else 0
                if current != expect_revision:
                    raise RevisionConflict(f"{kind}/{id}: expected revision {expect_revision}, found {current}")
            now = _now()
            entry = CatalogEntry(
                kind=kind,
                id=id,
                revision=(existing.revision if existing else 0) + 1,
                body=body,
                created_at=existing.created_at if existing else now,
                updated_at=now,
                deleted=False,
            )
            path = self._entry_path(kind, id)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".json.tmp")
            tmp.write_bytes(canonical_bytes(entry.to_json()))
            tmp.replace(path)
            return entry

    def get(self, kind: str, id: str) -> CatalogEntry:
        entry = self._read_entry(kind, id)
        if entry is None or entry.deleted:
            raise UnknownId(f"{kind}/{id}")
        return entry

    def list(self, kind: str, prefix: str = "") -> list[CatalogEntry]:
        kind_dir = self.root / "catalog" / kind
        if not kind_dir.exists():
            return []
        out = []
        for path in sorted(kind_dir.glob("*.json")):
            entry = CatalogEntry.from_json(json.loads(path.read_text(encoding="utf-8")))
            if not entry.deleted and entry.id.startswith(prefix):
                out.append(entry)
        return out

    def delete(self, kind: str, id: str) -> None:
        """Tombstone: the id disappears from get/list, revisions keep rising."""
        with self._catalog_lock:
            existing = self._read_entry(kind, id)
            if existing is None or existing.deleted:
                raise UnknownId(f"{kind}/{id}")
            existing.deleted = True
            existing.revision += 1
            existing.updated_at = _now()
            path = self._entry_path(kind, id)
            tmp = path.with_suffix(".json.tmp")
            tmp.write_bytes(canonical_bytes(existing.to_json()))
            tmp.replace(path)

    # --- record logs ------------------------------------------------------------

    def _run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def _writer(self, run_id: str, attempt: int) -> _LogWriter:
        key = (run_id, attempt)
        with self._writers_lock:
            if key not in self._writers:
                base = self._run_dir(run_id) / str(attempt)
                self._writers[key] = _LogWriter(base / "records.jsonl", base / "index.json")
            return self._writers[key]

    def append_records(self, run_id: str, attempt: int, records: list[dict]) -> int:
        """Idempotent ordered append; returns highest step persisted."""
        if not records:
            return self._writer(run_id, attempt).through_step
        for rec in records:
            if rec.get("run_id") != run_id:
                raise OrderViolation(f"record run_id {rec.get('run_id')!r} does not match {run_id!r}")
        return self._writer(run_id, attempt).append(records)

    def attempts(self, run_id: str) -> list[int]:
        run_dir = self._run_dir(run_id)
        if not run_dir.exists():
            return []
        return sorted(int(p.name) for p in run_dir.iterdir() if p.is_dir() and p.name.isdigit())

    def mark_run_complete(self, run_id: str, attempt: int) -> None:
        run_dir = self._run_dir(run_id)
        run_dir.mkdir(parents=True, exist_ok=True)
        tmp = run_dir / "meta.json.tmp"
        tmp.write_bytes(canonical_bytes({"completed_attempt": attempt}))
        tmp.replace(run_dir / "meta.json")

    def completed_attempt(self, run_id: str) -> int | None:
        meta = self._run_dir(run_id) / "meta.json"
        if not meta.exists():
            return None
        return json.loads(meta.read_text(encoding="utf-8")).get("completed_attempt")

    def default_attempt(self, run_id: str) -> int:
        done = self.completed_attempt(run_id)
        if done is not None:
            return done
        attempts = self.attempts(run_id)
        if not attempts:
            raise UnknownId(f"run {run_id} has no record logs")
        return attempts[-1]

    def read_records(
        self,
        run_id: str,
        attempt: int | None = None,
        from_step: int | None = None,
        to_step: int | None = None,
        tag: str | None = None,
    ) -> Iterator[dict]:
        """Records in log order; the only replay path (never re-executes runs)."""
        if attempt is None:
            attempt = self.default_attempt(run_id)
        base = self._run_dir(run_id) / str(attempt)
        log_path = base / "records.jsonl"
        if not log_path.exists():
            raise UnknownId(f"run {run_id} attempt {attempt}")
        key = (run_id, attempt)
        with self._writers_lock:
            writer = self._writers.get(key)
        if writer is not None:
            with writer.lock:  # one flushed, settled view
                pass
        start_offset = 0
        if from_step is not None and from_step > 0:
            start_offset = self._index_offset(base / "index.json", from_step)
        with open(log_path, "rb") as fh:
            if start_offset:
                fh.seek(start_offset)
            for line in fh:
                if not line.endswith(b"\n"):
                    break
                record = _parse_checked_line(line[:-1])
                if record is None:
                    raise CorruptLog(f"{log_path}: checksum failure on read")
                step = record["step"]
                if from_step is not None and step < from_step:
                    continue
                if to_step is not None and step > to_step:
                    break
                if tag is not None and record["tag"] != tag:
                    continue
                yield record

    @staticmethod
    def _index_offset(index_path: Path, from_step: int) -> int:
        if not index_path.exists():
            return 0
        try:
            index = json.loads(index_path.read_text(encoding="utf-8"))
        except ValueError:
            return 0
        best = 0
        for boundary, offset in index.items():
            if int(boundary) <= from_step and offset >= best:
                best = offset
        return best

    def through_step(self, run_id: str, attempt: int) -> int:
        return self._writer(run_id, attempt).through_step

    def close(self) -> None:
        with self._writers_lock:
            for writer in self._writers.values():
                writer.close()
            self._writers.clear()
