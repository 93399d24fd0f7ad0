"""Trace records: one per command/response pair, with gapless sequence
numbers and microsecond timestamps measured on a monotonic clock.  The
session header anchors those relative timestamps to wall-clock time once,
so replays and exports never depend on wall-clock jumps mid-capture.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .. import __version__
from ..clock import Clock


class TraceError(Exception):
    pass


@dataclass(frozen=True)
class SessionHeader:
    session_id: bytes
    started_at: float  # wall clock, seconds since the epoch
    tool_version: str = __version__
    profile_hash: str = ""
    rules_hash: str = ""


@dataclass(frozen=True)
class TraceRecord:
    seq: int
    t_command_us: int  # microseconds since session start
    t_response_us: int
    command: bytes
    response: bytes
    tags: tuple = ()
    rewritten_command: bool = False
    rewritten_response: bool = False
    original_command: Optional[bytes] = None
    original_response: Optional[bytes] = None


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


@dataclass
class Recorder:
    """Accumulates records for one session.

    `sinks` receive each record as it is appended; a header is offered to
    sinks that accept one (``start(header)``) before the first record.
    """

    clock: Clock
    session_id: bytes = b"\x00" * 16
    profile_hash: str = ""
    rules_hash: str = ""
    sinks: list = field(default_factory=list)

    def __post_init__(self):
        self._t0 = self.clock.now()
        self.header = SessionHeader(
            session_id=self.session_id,
            started_at=time.time(),
            profile_hash=self.profile_hash,
            rules_hash=self.rules_hash,
        )
        self.records: list[TraceRecord] = []
        self._lock = threading.Lock()  # provider sessions may share a recorder
        for sink in self.sinks:
            start = getattr(sink, "start", None)
            if start is not None:
                start(self.header)

    def stamp(self) -> int:
        return int(round((self.clock.now() - self._t0) * 1e6))

    def add(
        self,
        t_command_us: int,
        t_response_us: int,
        command: bytes,
        response: bytes,
        tags: tuple = (),
        original_command: Optional[bytes] = None,
        original_response: Optional[bytes] = None,
    ) -> TraceRecord:
        with self._lock:
            rec = TraceRecord(
                seq=len(self.records),
                t_command_us=t_command_us,
                t_response_us=t_response_us,
                command=bytes(command),
                response=bytes(response),
                tags=tuple(tags),
                rewritten_command=original_command is not None,
                rewritten_response=original_response is not None,
                original_command=original_command,
                original_response=original_response,
            )
            self.records.append(rec)
            for sink in self.sinks:
                sink.append(rec)
        return rec

    def close(self) -> None:
        for sink in self.sinks:
            fin = getattr(sink, "close", None)
            if fin is not None:
                fin()
