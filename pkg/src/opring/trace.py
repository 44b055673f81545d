"""Versioned event trace, one JSON object per line.

A run starts with a header (config, schema, templates, initial state,
classification), continues with timestamped events, and ends with one
final-state record per server plus a summary line. The per-server order
of apply/append events is the delivery order the offline checks reason
about, so writers must emit those events in the order the effects hit
the store; the commit-hook plumbing in the protocol guarantees that even
under threads.

All values are plain JSON. Cells are [table, [pk...], column, value]
with value null for a deleted row.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

TRACE_VERSION = "optrace/1"


class TraceError(ValueError):
    pass


def _canon(doc: dict) -> str:
    return json.dumps(doc, separators=(",", ":"))


class TraceWriter:
    """Collects events; thread-safe; sequence numbers are assigned in
    emission order so equal timestamps keep a stable total order."""

    def __init__(self, clock: Optional[Callable[[], float]] = None):
        self._lock = threading.Lock()
        self._seq = 0
        self.header: Optional[dict] = None
        self.events: List[dict] = []
        self.finals: List[dict] = []
        self.summary: Optional[dict] = None
        self._clock = clock

    def write_header(
        self,
        *,
        servers: int,
        sites: List[str],
        seed: str,
        config: dict,
        schema_text: str,
        templates_text: str,
        initial_db_dump: str,
        classes: Dict[str, str],
        partitioning: Dict[str, tuple],
    ) -> None:
        self.header = {
            "type": "header",
            "version": TRACE_VERSION,
            "servers": servers,
            "sites": list(sites),
            "seed": seed,
            "config": config,
            "classes": dict(classes),
            "partitioning": {k: list(v) for k, v in partitioning.items()},
            "schema": schema_text,
            "templates": templates_text,
            "initial_db": initial_db_dump,
        }

    def emit(self, type_: str, ts: Optional[float] = None, **fields) -> None:
        with self._lock:
            if ts is None:
                ts = self._clock() if self._clock else float(self._seq)
            self._seq += 1
            event = {"type": type_, "ts": round(ts, 6), "seq": self._seq}
            event.update((k, v) for k, v in fields.items() if v is not None)
            self.events.append(event)

    def server_final(self, server: int, digest: str, db_dump: str) -> None:
        self.finals.append(
            {"type": "server_final", "server": server, "digest": digest, "db": db_dump}
        )

    def write_summary(self, **fields) -> None:
        self.summary = {"type": "end", **fields}

    def to_jsonl(self) -> str:
        if self.header is None:
            raise TraceError("trace has no header")
        lines = [_canon(self.header)]
        lines.extend(_canon(e) for e in self.events)
        lines.extend(_canon(f) for f in self.finals)
        if self.summary is not None:
            lines.append(_canon(self.summary))
        return "\n".join(lines) + "\n"

    def as_trace(self) -> "Trace":
        """In-memory view for checking without a serialization round
        trip; shares the event dicts, so treat the result as read-only."""
        if self.header is None:
            raise TraceError("trace has no header")
        return Trace(
            self.header,
            list(self.events),
            {f["server"]: f for f in self.finals},
            self.summary,
        )


@dataclass
class Trace:
    header: dict
    events: List[dict]
    finals: Dict[int, dict]
    summary: Optional[dict] = None

    @property
    def n_servers(self) -> int:
        return self.header["servers"]

    def of_type(self, type_: str) -> List[dict]:
        return [e for e in self.events if e["type"] == type_]

    def per_server(self, type_: str, server: int) -> List[dict]:
        return [
            e
            for e in self.events
            if e["type"] == type_ and e.get("server") == server
        ]


_EVENT_TYPES = {
    "req",
    "map",
    "queue",
    "exec_begin",
    "exec_commit",
    "token_recv",
    "apply",
    "append",
    "token_pass",
    "reply",
}

_REQUIRED = {
    "req": ("op", "server", "txn", "args", "cls", "home", "client"),
    "map": ("op", "server", "to", "client"),
    "queue": ("op", "server"),
    "exec_begin": ("op", "server"),
    "exec_commit": ("op", "server", "stmts", "cells", "reply"),
    "token_recv": ("server", "epoch", "len"),
    "apply": ("server", "op", "origin", "oepoch", "cells"),
    "append": ("server", "op", "epoch", "empty"),
    "token_pass": ("server", "to", "epoch", "len"),
    "reply": ("op", "server", "client"),
}


def parse_trace(text: str) -> Trace:
    """Parse and structurally validate a trace document."""
    header = None
    events: List[dict] = []
    finals: Dict[int, dict] = {}
    summary = None
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise TraceError(f"line {i}: not JSON: {e}") from None
        if not isinstance(doc, dict) or "type" not in doc:
            raise TraceError(f"line {i}: not an event object")
        t = doc["type"]
        if t == "header":
            if header is not None:
                raise TraceError(f"line {i}: second header")
            if doc.get("version") != TRACE_VERSION:
                raise TraceError(
                    f"line {i}: unsupported version {doc.get('version')!r}"
                )
            header = doc
            continue
        if header is None:
            raise TraceError(f"line {i}: {t} before header")
        if t == "server_final":
            finals[doc["server"]] = doc
            continue
        if t == "end":
            summary = doc
            continue
        if t not in _EVENT_TYPES:
            raise TraceError(f"line {i}: unknown event type {t!r}")
        for k in _REQUIRED[t]:
            if k not in doc:
                raise TraceError(f"line {i}: {t} event missing {k!r}")
        events.append(doc)
    if header is None:
        raise TraceError("trace has no header")
    n = header["servers"]
    for e in events:
        s = e.get("server")
        if s is not None and not (0 <= s < n):
            raise TraceError(f"event seq {e.get('seq')}: server {s} out of range")
    return Trace(header, events, finals, summary)
