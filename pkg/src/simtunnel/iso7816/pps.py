"""Protocol and Parameters Selection (the optional exchange after the ATR).

Frame layout: PPSS=0xFF, PPS0 (presence bits + protocol nibble), optional
PPS1 (Fi/Di code), PCK making the XOR of all frame octets zero.
"""

from __future__ import annotations

import enum
from dataclasses import replace

from ..clock import Clock
from .channel import HalfDuplexChannel
from .params import Protocol, ProtocolParams, lookup_fidi, DEFAULT_FI, DEFAULT_DI
from .t1 import lrc

PPSS = 0xFF


class PpsError(Exception):
    pass


class PpsChecksumError(PpsError):
    pass


class PpsMismatch(PpsError):
    pass


class PpsSide(enum.Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


def build_pps_frame(params: ProtocolParams) -> bytes:
    with_pps1 = (params.fi, params.di) != (DEFAULT_FI, DEFAULT_DI)
    pps0 = params.active_protocol.value | (0x10 if with_pps1 else 0)
    body = bytes([PPSS, pps0]) + (bytes([params.ta1]) if with_pps1 else b"")
    return body + bytes([lrc(body)])


def _read_pps_frame(channel: HalfDuplexChannel, deadline: float) -> bytes:
    first = channel.receive(1, deadline)
    if first[0] != PPSS:
        raise PpsMismatch("expected PPSS=0xFF, got 0x%02X" % first[0])
    pps0 = channel.receive(1, deadline)
    extra = bin(pps0[0] >> 4 & 0x07).count("1")  # PPS1/2/3 presence bits
    rest = channel.receive(extra + 1, deadline)
    frame = first + pps0 + rest
    if lrc(frame) != 0:
        raise PpsChecksumError("PCK fold is nonzero")
    return frame


def _frame_params(frame: bytes, base: ProtocolParams) -> ProtocolParams:
    protocol = Protocol(frame[1] & 0x0F)
    if frame[1] & 0x10:
        fi, di = lookup_fidi(frame[2])
    else:
        fi, di = DEFAULT_FI, DEFAULT_DI
    return replace(base, active_protocol=protocol, fi=fi, di=di)


def pps_exchange(
    requested: ProtocolParams,
    channel: HalfDuplexChannel,
    clock: Clock,
    side: PpsSide,
    timeout: float = 1.0,
) -> ProtocolParams:
    """Run one PPS negotiation; returns the parameters both sides now use.

    The responder accepts the request verbatim (echo).  The initiator
    tolerates a response that omits PPS1 (card stays at default Fi/Di) but
    rejects any other deviation.
    """
    deadline = clock.now() + timeout
    if side is PpsSide.RESPONDER:
        frame = _read_pps_frame(channel, deadline)
        channel.send(frame)
        return _frame_params(frame, requested)
    request = build_pps_frame(requested)
    channel.send(request)
    response = _read_pps_frame(channel, deadline)
    if response[1] & 0x0F != requested.active_protocol.value:
        raise PpsMismatch("response offers T=%d" % (response[1] & 0x0F))
    if response == request:
        return requested
    if response[1] & 0x10 == 0:
        # card declined the Fi/Di proposal; fall back to defaults
        return replace(requested, fi=DEFAULT_FI, di=DEFAULT_DI)
    raise PpsMismatch("response alters the request in a disallowed way")
