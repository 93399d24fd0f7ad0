"""JSONL trace files: a header line, then one object per record.

All byte fields are lowercase hex.  Readers validate that sequence numbers
start at 0 and are gapless, and that timestamps never run backwards.
"""

from __future__ import annotations

import json
from typing import IO, Iterable

from ..hexutil import b2h, h2b
from .records import SessionHeader, TraceError, TraceRecord


def _header_obj(h: SessionHeader) -> dict:
    return {
        "type": "header",
        "session_id": b2h(h.session_id),
        "started_at": h.started_at,
        "tool_version": h.tool_version,
        "profile_hash": h.profile_hash,
        "rules_hash": h.rules_hash,
    }


def _record_obj(r: TraceRecord) -> dict:
    obj = {
        "type": "record",
        "seq": r.seq,
        "t_command_us": r.t_command_us,
        "t_response_us": r.t_response_us,
        "command": b2h(r.command),
        "response": b2h(r.response),
    }
    if r.tags:
        obj["tags"] = list(r.tags)
    if r.rewritten_command:
        obj["original_command"] = b2h(r.original_command)
    if r.rewritten_response:
        obj["original_response"] = b2h(r.original_response)
    return obj


class JsonlWriter:
    """Streaming sink: usable as a Recorder sink or standalone."""

    def __init__(self, fh: IO[str]):
        self.fh = fh
        self._wrote_header = False

    def start(self, header: SessionHeader) -> None:
        self.fh.write(json.dumps(_header_obj(header)) + "\n")
        self._wrote_header = True

    def append(self, record: TraceRecord) -> None:
        if not self._wrote_header:
            raise TraceError("record before header")
        self.fh.write(json.dumps(_record_obj(record)) + "\n")

    def close(self) -> None:
        self.fh.flush()


def write_trace(fh: IO[str], header: SessionHeader, records: Iterable[TraceRecord]) -> None:
    w = JsonlWriter(fh)
    w.start(header)
    for r in records:
        w.append(r)
    w.close()


def read_trace(fh: IO[str]) -> tuple[SessionHeader, list[TraceRecord]]:
    header = None
    records: list[TraceRecord] = []
    last_t = 0
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError("line %d: %s" % (lineno, exc)) from None
        kind = obj.get("type")
        if kind == "header":
            if header is not None:
                raise TraceError("line %d: second header" % lineno)
            header = SessionHeader(
                session_id=h2b(obj["session_id"]),
                started_at=float(obj["started_at"]),
                tool_version=obj.get("tool_version", ""),
                profile_hash=obj.get("profile_hash", ""),
                rules_hash=obj.get("rules_hash", ""),
            )
        elif kind == "record":
            if header is None:
                raise TraceError("line %d: record before header" % lineno)
            rec = TraceRecord(
                seq=int(obj["seq"]),
                t_command_us=int(obj["t_command_us"]),
                t_response_us=int(obj["t_response_us"]),
                command=h2b(obj["command"]),
                response=h2b(obj["response"]),
                tags=tuple(obj.get("tags", ())),
                rewritten_command="original_command" in obj,
                rewritten_response="original_response" in obj,
                original_command=h2b(obj["original_command"]) if "original_command" in obj else None,
                original_response=h2b(obj["original_response"]) if "original_response" in obj else None,
            )
            if rec.seq != len(records):
                raise TraceError("line %d: seq %d, expected %d" % (lineno, rec.seq, len(records)))
            if rec.t_command_us < last_t or rec.t_response_us < rec.t_command_us:
                raise TraceError("line %d: timestamps run backwards" % lineno)
            last_t = rec.t_response_us
            records.append(rec)
        else:
            raise TraceError("line %d: unknown entry type %r" % (lineno, kind))
    if header is None:
        raise TraceError("trace has no header")
    return header, records
