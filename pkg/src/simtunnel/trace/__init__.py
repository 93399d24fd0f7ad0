"""Traffic capture: in-memory records, JSONL persistence, GSMTAP export,
and trace replay against a live backend."""

from .records import Recorder, SessionHeader, TraceError, TraceRecord
from .jsonl import read_trace, write_trace, JsonlWriter
from .gsmtap import GsmtapExporter, gsmtap_packet
from .replay import ReplayReport, replay_trace

__all__ = [
    "Recorder",
    "SessionHeader",
    "TraceError",
    "TraceRecord",
    "read_trace",
    "write_trace",
    "JsonlWriter",
    "GsmtapExporter",
    "gsmtap_packet",
    "ReplayReport",
    "replay_trace",
]
