"""SIM Access Profile message codec.

Message layout: id octet, parameter count octet, two reserved zero
octets, then parameters.  Each parameter: id octet, reserved octet,
2-octet big-endian length, value, zero padding to the next 4-octet
boundary.  These identifiers are frozen by golden-byte tests; changing
any of them breaks interop with phone-side servers.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

MAX_MSG_SIZE_MIN = 512
DEFAULT_MAX_MSG_SIZE = 0xFFFF


class MsgId(enum.IntEnum):
    CONNECT_REQ = 0x00
    CONNECT_RESP = 0x01
    DISCONNECT_REQ = 0x02
    DISCONNECT_RESP = 0x03
    DISCONNECT_IND = 0x04
    TRANSFER_APDU_REQ = 0x05
    TRANSFER_APDU_RESP = 0x06
    TRANSFER_ATR_REQ = 0x07
    TRANSFER_ATR_RESP = 0x08
    POWER_SIM_OFF_REQ = 0x09
    POWER_SIM_OFF_RESP = 0x0A
    POWER_SIM_ON_REQ = 0x0B
    POWER_SIM_ON_RESP = 0x0C
    RESET_SIM_REQ = 0x0D
    RESET_SIM_RESP = 0x0E
    STATUS_IND = 0x11
    ERROR_RESP = 0x12


class ParamId(enum.IntEnum):
    MAX_MSG_SIZE = 0x00
    CONNECTION_STATUS = 0x01
    RESULT_CODE = 0x02
    DISCONNECTION_TYPE = 0x03
    COMMAND_APDU = 0x04
    RESPONSE_APDU = 0x05
    ATR = 0x06
    CARD_READER_STATUS = 0x07
    STATUS_CHANGE = 0x08


class ConnectionStatus(enum.IntEnum):
    OK = 0x00
    UNABLE = 0x01
    MAX_MSG_SIZE_UNSUPPORTED = 0x02
    MAX_MSG_SIZE_TOO_SMALL = 0x03
    ONGOING_CALL = 0x04


class ResultCode(enum.IntEnum):
    OK = 0x00
    NO_REASON = 0x01
    CARD_NOT_ACCESSIBLE = 0x02
    CARD_POWERED_OFF = 0x03
    CARD_REMOVED = 0x04
    CARD_POWERED_ON = 0x05
    DATA_NOT_AVAILABLE = 0x06
    NOT_SUPPORTED = 0x07


class StatusChange(enum.IntEnum):
    UNKNOWN_ERROR = 0x00
    CARD_RESET = 0x01
    CARD_NOT_ACCESSIBLE = 0x02
    CARD_REMOVED = 0x03
    CARD_INSERTED = 0x04
    CARD_RECOVERED = 0x05


class SapError(Exception):
    pass


@dataclass(frozen=True)
class SapParam:
    param_id: int
    value: bytes


@dataclass(frozen=True)
class SapMessage:
    msg_id: int
    params: tuple = ()

    def param(self, param_id: int) -> bytes:
        for p in self.params:
            if p.param_id == param_id:
                return p.value
        raise SapError("missing parameter 0x%02X" % param_id)

    def maybe_param(self, param_id: int):
        for p in self.params:
            if p.param_id == param_id:
                return p.value
        return None


def _pad(n: int) -> int:
    return (4 - n % 4) % 4


def encode_sap_message(msg: SapMessage) -> bytes:
    out = bytearray(struct.pack("!BBH", msg.msg_id, len(msg.params), 0))
    for p in msg.params:
        out += struct.pack("!BBH", p.param_id, 0, len(p.value))
        out += p.value
        out += b"\x00" * _pad(len(p.value))
    return bytes(out)


def decode_sap_message(data: bytes) -> SapMessage:
    if len(data) < 4:
        raise SapError("message shorter than its 4-octet header")
    msg_id, count, reserved = struct.unpack("!BBH", data[:4])
    if reserved != 0:
        raise SapError("reserved header octets must be zero")
    pos = 4
    params = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise SapError("truncated parameter header")
        pid, res, length = struct.unpack("!BBH", data[pos : pos + 4])
        if res != 0:
            raise SapError("reserved parameter octet must be zero")
        pos += 4
        if pos + length > len(data):
            raise SapError("truncated parameter value")
        value = bytes(data[pos : pos + length])
        pos += length + _pad(length)
        params.append(SapParam(pid, value))
    if pos > len(data):
        raise SapError("truncated parameter padding")
    if pos != len(data):
        raise SapError("%d trailing octets" % (len(data) - pos))
    return SapMessage(msg_id, tuple(params))


def read_sap_message(stream, deadline: float = float("inf")) -> SapMessage:
    """Incrementally consume exactly one message from a byte stream."""
    raw = bytearray(stream.receive(4, deadline))
    msg_id, count, reserved = struct.unpack("!BBH", raw)
    if reserved != 0:
        raise SapError("reserved header octets must be zero")
    for _ in range(count):
        phead = stream.receive(4, deadline)
        raw += phead
        length = struct.unpack("!H", phead[2:])[0]
        body = stream.receive(length + _pad(length), deadline)
        raw += body
    return decode_sap_message(bytes(raw))


def u16(value: int) -> bytes:
    return struct.pack("!H", value)


def connect_req(max_msg_size: int = DEFAULT_MAX_MSG_SIZE) -> SapMessage:
    return SapMessage(MsgId.CONNECT_REQ, (SapParam(ParamId.MAX_MSG_SIZE, u16(max_msg_size)),))


def connect_resp(status: int, max_msg_size: int | None = None) -> SapMessage:
    params = [SapParam(ParamId.CONNECTION_STATUS, bytes([status]))]
    if max_msg_size is not None:
        params.append(SapParam(ParamId.MAX_MSG_SIZE, u16(max_msg_size)))
    return SapMessage(MsgId.CONNECT_RESP, tuple(params))


def status_ind(change: int) -> SapMessage:
    return SapMessage(MsgId.STATUS_IND, (SapParam(ParamId.STATUS_CHANGE, bytes([change])),))
