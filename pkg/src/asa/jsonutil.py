"""Canonical JSON: the single serialization used on the wire, on disk, and in tests.

Canonical form is UTF-8, keys sorted lexicographically, no insignificant
whitespace. Equal values therefore serialize to equal bytes, which is what
byte-identity of record logs and wire frames is defined over.
"""

from __future__ import annotations

import json
from typing import Any


def canonical_dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_bytes(obj: Any) -> bytes:
    return canonical_dumps(obj).encode("utf-8")


def canonical_line(obj: Any) -> bytes:
    """One canonical JSON document plus newline; the record-log line format."""
    return canonical_dumps(obj).encode("utf-8") + b"\n"
