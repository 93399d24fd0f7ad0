"""APDU object model: command/response values, ISO case classification,
SIM command decoding, proactive-command detection, and one-line rendering.

Everything here is a pure value or pure function; nothing touches I/O.

The ``describe`` line format is a stable contract used by log tooling:

    <KIND>[ <detail>] → <result>

where KIND is the upper-case SIM command name (or ``UNKNOWN INS=XX``),
detail is the selected file for SELECT, ``le=N`` / ``lc=N`` / ``rec=N``
otherwise, and result is ``[N bytes, ]<status meaning>``.  Unknown status
words render as ``SW=XXXX``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional


class ApduError(ValueError):
    pass


class Truncated(ApduError):
    pass


class LcMismatch(ApduError):
    pass


class ExtendedNotSupported(ApduError):
    pass


class Case(enum.Enum):
    CASE_1 = 1  # no data, no le
    CASE_2 = 2  # no data, le
    CASE_3 = 3  # data, no le
    CASE_4 = 4  # data and le


@dataclass(frozen=True)
class CommandApdu:
    cla: int
    ins: int
    p1: int
    p2: int
    data: bytes = b""
    le: Optional[int] = None  # 1..256 after decoding (wire 0x00 means 256), or 0

    def __post_init__(self):
        if not 0 <= len(self.data) <= 255:
            raise ApduError("command data must be 0-255 bytes")
        if self.le is not None and not 0 <= self.le <= 256:
            raise ApduError("le out of range")

    @property
    def case(self) -> Case:
        if self.data:
            return Case.CASE_4 if self.le is not None else Case.CASE_3
        return Case.CASE_2 if self.le is not None else Case.CASE_1

    @property
    def p1p2(self) -> int:
        return (self.p1 << 8) | self.p2

    def header(self) -> bytes:
        return bytes([self.cla, self.ins, self.p1, self.p2])


@dataclass(frozen=True)
class ResponseApdu:
    data: bytes
    sw1: int
    sw2: int

    @property
    def sw(self) -> int:
        return (self.sw1 << 8) | self.sw2

    @classmethod
    def from_sw(cls, sw: int, data: bytes = b"") -> "ResponseApdu":
        return cls(data, (sw >> 8) & 0xFF, sw & 0xFF)


def parse_command(raw: bytes) -> CommandApdu:
    """Decode a short APDU, classifying its ISO case from the total length."""
    if len(raw) < 4:
        raise Truncated("command APDU shorter than 4-byte header")
    cla, ins, p1, p2 = raw[0], raw[1], raw[2], raw[3]
    if len(raw) == 4:
        return CommandApdu(cla, ins, p1, p2)
    if len(raw) == 5:
        le = raw[4] or 256
        return CommandApdu(cla, ins, p1, p2, le=le)
    lc = raw[4]
    if lc == 0:
        raise ExtendedNotSupported("extended-length APDUs are not supported")
    body = raw[5:]
    if len(body) == lc:
        return CommandApdu(cla, ins, p1, p2, data=bytes(body))
    if len(body) == lc + 1:
        le = body[-1] or 256
        return CommandApdu(cla, ins, p1, p2, data=bytes(body[:-1]), le=le)
    raise LcMismatch("Lc=%d does not match %d body bytes" % (lc, len(body)))


def serialize_command(cmd: CommandApdu) -> bytes:
    out = bytearray(cmd.header())
    if cmd.data:
        out.append(len(cmd.data))
        out += cmd.data
    if cmd.le is not None:
        out.append(cmd.le & 0xFF)  # 256 encodes as 0x00
    return bytes(out)


def parse_response(raw: bytes) -> ResponseApdu:
    if len(raw) < 2:
        raise Truncated("response APDU shorter than 2 status bytes")
    return ResponseApdu(bytes(raw[:-2]), raw[-2], raw[-1])


def serialize_response(resp: ResponseApdu) -> bytes:
    return resp.data + bytes([resp.sw1, resp.sw2])


class SimCommandKind(enum.Enum):
    SELECT = "SELECT"
    READ_BINARY = "READ BINARY"
    UPDATE_BINARY = "UPDATE BINARY"
    READ_RECORD = "READ RECORD"
    UPDATE_RECORD = "UPDATE RECORD"
    STATUS = "STATUS"
    GET_RESPONSE = "GET RESPONSE"
    FETCH = "FETCH"
    TERMINAL_RESPONSE = "TERMINAL RESPONSE"
    ENVELOPE = "ENVELOPE"
    AUTHENTICATE = "AUTHENTICATE"
    VERIFY_PIN = "VERIFY PIN"
    UNKNOWN = "UNKNOWN"


_INS_TABLE = {
    0xA4: SimCommandKind.SELECT,
    0xB0: SimCommandKind.READ_BINARY,
    0xD6: SimCommandKind.UPDATE_BINARY,
    0xB2: SimCommandKind.READ_RECORD,
    0xDC: SimCommandKind.UPDATE_RECORD,
    0xF2: SimCommandKind.STATUS,
    0xC0: SimCommandKind.GET_RESPONSE,
    0x12: SimCommandKind.FETCH,
    0x14: SimCommandKind.TERMINAL_RESPONSE,
    0xC2: SimCommandKind.ENVELOPE,
    0x88: SimCommandKind.AUTHENTICATE,
    0x20: SimCommandKind.VERIFY_PIN,
}


def classify_sim(cmd: CommandApdu) -> SimCommandKind:
    """Total decode keyed on INS; class byte is left uninterpreted."""
    return _INS_TABLE.get(cmd.ins, SimCommandKind.UNKNOWN)


@dataclass(frozen=True)
class ProactiveIndication:
    pending_length: int  # 1..255


def detect_proactive(resp: ResponseApdu) -> Optional[ProactiveIndication]:
    """91 XX means a proactive command of XX bytes awaits FETCH.

    61 XX is GET RESPONSE signaling, deliberately not reported here.
    """
    if resp.sw1 == 0x91:
        return ProactiveIndication(resp.sw2)
    return None


# Status words the toolkit itself generates or branches on; everything else
# renders as raw hex.
_SW_TEXT = {
    0x9000: "OK",
    0x6D00: "instruction not supported",
    0x6E00: "class not supported",
    0x6A82: "file not found",
    0x6982: "security status not satisfied",
    0x6983: "authentication method blocked",
    0x6700: "wrong length",
    0x9862: "authentication error",
}

_FILE_NAMES = {
    0x3F00: "MF",
    0x2FE2: "EF_ICCID",
    0x7F20: "DF_GSM",
    0x7F10: "DF_TELECOM",
    0x6F07: "EF_IMSI",
    0x6F7E: "EF_LOCI",
}


def describe_sw(sw1: int, sw2: int) -> str:
    sw = (sw1 << 8) | sw2
    if sw in _SW_TEXT:
        return _SW_TEXT[sw]
    if sw1 == 0x61:
        return "%d response bytes available" % (sw2 or 256)
    if sw1 == 0x6C:
        return "wrong le, retry with le=%d" % sw2
    if sw1 == 0x91:
        return "OK, proactive command pending (%d bytes)" % sw2
    return "SW=%04X" % sw


def describe(cmd: CommandApdu, resp: Optional[ResponseApdu] = None) -> str:
    """Deterministic single-line rendering of an exchange (format above)."""
    kind = classify_sim(cmd)
    parts = []
    if kind is SimCommandKind.UNKNOWN:
        parts.append("UNKNOWN INS=%02X" % cmd.ins)
    else:
        parts.append(kind.value)
    if kind is SimCommandKind.SELECT and len(cmd.data) == 2:
        fid = int.from_bytes(cmd.data, "big")
        name = _FILE_NAMES.get(fid)
        parts.append("%s (%04X)" % (name, fid) if name else "(%04X)" % fid)
    else:
        if kind in (SimCommandKind.READ_RECORD, SimCommandKind.UPDATE_RECORD):
            parts.append("rec=%d" % cmd.p1)
        if kind is SimCommandKind.READ_BINARY and cmd.p1p2:
            parts.append("offset=%d" % cmd.p1p2)
        if cmd.data and kind is not SimCommandKind.SELECT:
            parts.append("lc=%d" % len(cmd.data))
        if cmd.le is not None:
            parts.append("le=%d" % cmd.le)
    line = " ".join(parts)
    if resp is None:
        return line
    result = describe_sw(resp.sw1, resp.sw2)
    if resp.data:
        result = "%d bytes, %s" % (len(resp.data), result)
    return "%s → %s" % (line, result)
