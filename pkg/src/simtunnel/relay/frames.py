"""Tunnel wire format: msg_type octet, 4-octet big-endian payload length,
payload.  No escaping, no resynchronization: a broken stream is a
deterministic error, never silently skipped.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass

from ..iso7816.channel import ChannelClosed, HalfDuplexChannel

MAX_PAYLOAD = 2**24 - 1
WIRE_VERSION = 0x01

ROLE_PROBE = 0x01
ROLE_PROVIDER = 0x02


class MsgType(enum.IntEnum):
    HELLO = 0x01
    ATR_REQUEST = 0x02
    ATR_RESPONSE = 0x03
    APDU_REQUEST = 0x04
    APDU_RESPONSE = 0x05
    RESET = 0x06
    ERROR = 0x07
    PING = 0x08
    PONG = 0x09


class ErrorCode(enum.IntEnum):
    BACKEND_UNAVAILABLE = 0x01
    BACKEND_TIMEOUT = 0x02
    MALFORMED_APDU = 0x03


class FrameError(Exception):
    pass


class OversizedFrame(FrameError):
    pass


class UnknownType(FrameError):
    pass


class TruncatedStream(FrameError):
    pass


@dataclass(frozen=True)
class RelayMessage:
    msg_type: MsgType
    payload: bytes = b""


def encode_message(m: RelayMessage) -> bytes:
    if len(m.payload) > MAX_PAYLOAD:
        raise OversizedFrame("payload of %d bytes" % len(m.payload))
    return struct.pack("!BI", int(m.msg_type), len(m.payload)) + m.payload


def decode_message(stream: HalfDuplexChannel, deadline: float = float("inf")) -> RelayMessage:
    """Consume exactly one frame from a byte stream."""
    try:
        header = stream.receive(5, deadline)
    except ChannelClosed:
        raise
    msg_type, length = struct.unpack("!BI", header)
    if length > MAX_PAYLOAD:
        raise OversizedFrame("declared payload of %d bytes" % length)
    try:
        payload = stream.receive(length, deadline) if length else b""
    except ChannelClosed:
        raise TruncatedStream("stream ended inside a frame") from None
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise UnknownType("msg_type 0x%02X" % msg_type) from None
    return RelayMessage(mt, payload)


def decode_message_bytes(data: bytes) -> tuple[RelayMessage, int]:
    """Decode one frame from a buffer; returns (message, bytes consumed)."""
    if len(data) < 5:
        raise TruncatedStream("%d bytes, need at least 5" % len(data))
    msg_type, length = struct.unpack("!BI", data[:5])
    if length > MAX_PAYLOAD:
        raise OversizedFrame("declared payload of %d bytes" % length)
    if len(data) < 5 + length:
        raise TruncatedStream("frame declares %d payload bytes" % length)
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise UnknownType("msg_type 0x%02X" % msg_type) from None
    return RelayMessage(mt, bytes(data[5 : 5 + length])), 5 + length


def hello_payload(role: int, session_id: bytes | None = None) -> bytes:
    session_id = session_id if session_id is not None else os.urandom(16)
    if len(session_id) != 16:
        raise ValueError("session_id must be 16 octets")
    return bytes([WIRE_VERSION, role]) + session_id


def parse_hello(payload: bytes) -> tuple[int, bytes]:
    """Returns (role, session_id); unknown payload tails are tolerated."""
    if len(payload) < 18:
        raise FrameError("HELLO payload of %d bytes" % len(payload))
    if payload[0] != WIRE_VERSION:
        raise FrameError("peer speaks wire version %d" % payload[0])
    return payload[1], bytes(payload[2:18])
