"""Answer-To-Reset parsing and construction.

The ATR is purely a local artifact of each endpoint: the modem-facing side
presents its own, the card-facing side consumes the real card's, and the
two never have to agree.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

from .channel import HalfDuplexChannel
from .params import Protocol, ProtocolParams, lookup_fidi, DEFAULT_FI, DEFAULT_DI


class AtrError(ValueError):
    pass


class TruncatedAtr(AtrError):
    pass


class BadTck(AtrError):
    pass


class UnknownConvention(AtrError):
    pass


class HistoricalLengthMismatch(AtrError):
    pass


class TrailingAtrBytes(AtrError):
    pass


class HistoricalTooLong(AtrError):
    pass


class Convention(enum.Enum):
    DIRECT = 0x3B
    INVERSE = 0x3F


_KINDS = ("TA", "TB", "TC", "TD")


@dataclass(frozen=True)
class Atr:
    convention: Convention
    interface_bytes: tuple  # of (level, kind, value)
    offered_protocols: frozenset  # of Protocol
    historical_bytes: bytes
    tck: Optional[int]

    def interface_byte(self, level: int, kind: str) -> Optional[int]:
        for lv, k, v in self.interface_bytes:
            if lv == level and k == kind:
                return v
        return None

    @property
    def ta1(self) -> Optional[int]:
        return self.interface_byte(1, "TA")

    @property
    def fidi(self) -> tuple[int, int]:
        return lookup_fidi(self.ta1)


def _parse(read1: Callable[[], int]) -> Atr:
    ts = read1()
    try:
        convention = Convention(ts)
    except ValueError:
        raise UnknownConvention("TS=0x%02X" % ts) from None
    t0 = read1()
    checked = [t0]

    def read_checked() -> int:
        b = read1()
        checked.append(b)
        return b

    hist_len = t0 & 0x0F
    y = t0 >> 4
    interface = []
    protocol_nibbles = []
    level = 1
    while y:
        for bit, kind in zip((1, 2, 4, 8), _KINDS):
            if y & bit:
                v = read_checked()
                interface.append((level, kind, v))
                if kind == "TD":
                    protocol_nibbles.append(v & 0x0F)
        last_td = interface[-1] if interface and interface[-1][1] == "TD" else None
        y = (last_td[2] >> 4) if last_td else 0
        level += 1
    try:
        historical = bytes(read_checked() for _ in range(hist_len))
    except TruncatedAtr:
        raise HistoricalLengthMismatch(
            "T0 announces %d historical bytes" % hist_len
        ) from None
    offered = frozenset(
        Protocol(t) for t in protocol_nibbles if t in (0, 1)
    ) or frozenset({Protocol.T0})
    tck = None
    if any(t != 0 for t in protocol_nibbles):
        tck = read_checked()
        folded = 0
        for b in checked:
            folded ^= b
        if folded != 0:
            raise BadTck("ATR checksum fold is 0x%02X, expected 0x00" % folded)
    return Atr(convention, tuple(interface), offered, historical, tck)


def parse_atr(raw: bytes) -> Atr:
    """Decode a complete ATR; trailing bytes are an error."""
    it = iter(raw)

    def read1() -> int:
        try:
            return next(it)
        except StopIteration:
            raise TruncatedAtr("ATR ends mid-structure") from None

    atr = _parse(read1)
    leftover = sum(1 for _ in it)
    if leftover:
        raise TrailingAtrBytes("%d bytes after the ATR" % leftover)
    return atr


def read_atr(channel: HalfDuplexChannel, deadline: float) -> tuple[Atr, bytes]:
    """Incrementally consume exactly one ATR from a byte channel."""
    consumed = bytearray()

    def read1() -> int:
        b = channel.receive(1, deadline)[0]
        consumed.append(b)
        return b

    atr = _parse(read1)
    return atr, bytes(consumed)


def build_atr(params: ProtocolParams, historical: bytes = b"") -> bytes:
    """Encode an ATR offering exactly params.active_protocol.

    parse_atr round-trips the convention, protocol, Fi/Di, and historical
    bytes; higher-level waiting-time integers are left at their defaults.
    """
    if len(historical) > 15:
        raise HistoricalTooLong("%d historical bytes (max 15)" % len(historical))
    ta1_needed = (params.fi, params.di) != (DEFAULT_FI, DEFAULT_DI)
    td1_needed = params.active_protocol is not Protocol.T0
    y1 = (0x10 if ta1_needed else 0) | (0x80 if td1_needed else 0)
    out = bytearray([Convention.DIRECT.value, y1 | len(historical)])
    if ta1_needed:
        out.append(params.ta1)
    if td1_needed:
        out.append(params.active_protocol.value)  # TD1: no further bytes, T=1
    out += historical
    if td1_needed:
        tck = 0
        for b in out[1:]:
            tck ^= b
        out.append(tck)
    return bytes(out)
