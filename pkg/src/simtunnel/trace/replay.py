"""Replay a captured trace against a live backend and diff the responses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from ..clock import Clock, SystemClock
from .records import TraceRecord


@dataclass
class Mismatch:
    seq: int
    command: bytes
    expected: bytes
    actual: bytes


@dataclass
class ReplayReport:
    total: int = 0
    matched: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def replay_trace(
    records: Iterable[TraceRecord],
    exchange: Callable[[bytes], bytes],
    paced: bool = False,
    clock: Optional[Clock] = None,
) -> ReplayReport:
    """Send each recorded command through `exchange`, comparing responses
    byte for byte.  `paced` reproduces the original inter-command gaps."""
    clock = clock or SystemClock()
    report = ReplayReport()
    t0 = clock.now()
    base_us = None
    for rec in records:
        if paced:
            if base_us is None:
                base_us = rec.t_command_us
            target = t0 + (rec.t_command_us - base_us) / 1e6
            now = clock.now()
            if target > now:
                clock.sleep(target - now)
        actual = exchange(rec.command)
        report.total += 1
        if actual == rec.response:
            report.matched += 1
        else:
            report.mismatches.append(Mismatch(rec.seq, rec.command, rec.response, actual))
    return report
