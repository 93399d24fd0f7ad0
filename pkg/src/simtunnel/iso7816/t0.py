"""T=0: the TPDU procedure-byte machine.

Terminal side drives the 5-byte header and obeys procedure bytes (ACK,
byte-wise complemented ACK, NULL, status).  Card side maps TPDUs back to
APDUs, invokes a handler, and emits NULL bytes on a fixed cadence while the
handler is pending so arbitrary tunnel latency never trips the terminal's
work waiting time.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable, Optional

from ..apdu import (
    Case,
    CommandApdu,
    ResponseApdu,
    SimCommandKind,
    classify_sim,
    parse_command,
)
from ..clock import Clock
from .channel import HalfDuplexChannel, ChannelTimeout
from .params import TimingConfig


class T0ProtocolViolation(Exception):
    """Invalid procedure byte or impossible transfer request."""


NULL = 0x60

Handler = Callable[[CommandApdu], ResponseApdu]

# INS values whose P3 is a command-data length (terminal -> card).  All
# other instructions are treated as response-direction (P3 = Le); unknown
# instructions default to response-direction so they can still tunnel.
_DATA_TO_CARD = {
    SimCommandKind.SELECT,
    SimCommandKind.UPDATE_BINARY,
    SimCommandKind.UPDATE_RECORD,
    SimCommandKind.TERMINAL_RESPONSE,
    SimCommandKind.ENVELOPE,
    SimCommandKind.AUTHENTICATE,
    SimCommandKind.VERIFY_PIN,
}


def _p3(cmd: CommandApdu) -> int:
    case = cmd.case
    if case is Case.CASE_1:
        return 0
    if case is Case.CASE_2:
        return cmd.le & 0xFF
    return len(cmd.data)


def t0_exchange_terminal(
    cmd: CommandApdu,
    channel: HalfDuplexChannel,
    clock: Clock,
    timing: TimingConfig = TimingConfig(),
) -> ResponseApdu:
    """Issue one command as terminal; handles NULL, ~INS, and 6C retry."""
    while True:
        channel.send(cmd.header() + bytes([_p3(cmd)]))
        resp = _drive_procedure_bytes(cmd, channel, clock, timing)
        if resp.sw1 == 0x6C and cmd.case is Case.CASE_2:
            cmd = replace(cmd, le=resp.sw2 or 256)
            continue
        return resp


def _drive_procedure_bytes(cmd, channel, clock, timing) -> ResponseApdu:
    to_send = cmd.data
    sent = 0
    expected = (cmd.le or 0) if cmd.case is Case.CASE_2 else 0
    received = bytearray()
    deadline = clock.now() + timing.work_waiting
    while True:
        b = channel.receive(1, deadline)[0]
        deadline = clock.now() + timing.work_waiting
        if b == NULL:
            continue
        if b == cmd.ins or b == (cmd.ins ^ 0xFF):
            single = b != cmd.ins
            if sent < len(to_send):
                chunk = to_send[sent : sent + 1] if single else to_send[sent:]
                channel.send(chunk)
                sent += len(chunk)
            elif len(received) < expected:
                want = 1 if single else expected - len(received)
                received += channel.receive(want, clock.now() + timing.work_waiting)
                deadline = clock.now() + timing.work_waiting
            else:
                raise T0ProtocolViolation("ACK with no data left to transfer")
            continue
        if (0x61 <= b <= 0x6F) or (0x90 <= b <= 0x9F):
            sw2 = channel.receive(1, deadline)[0]
            return ResponseApdu(bytes(received), b, sw2)
        raise T0ProtocolViolation("unexpected procedure byte 0x%02X" % b)


def _run_with_nulls(channel, clock, timing, handler, cmd) -> ResponseApdu:
    """Run the handler off-thread, emitting NULL every null_interval."""
    box: list = []

    def work():
        try:
            box.append(("ok", handler(cmd)))
        except BaseException as exc:  # propagated to the session loop
            box.append(("err", exc))
        finally:
            clock.notify_all()

    clock.spawn(work, name="t0-handler")
    while not clock.wait_for(lambda: bool(box), clock.now() + timing.null_interval):
        channel.send(bytes([NULL]))
    status, value = box[0]
    if status == "err":
        raise value
    return value


def t0_serve_command(
    channel: HalfDuplexChannel,
    clock: Clock,
    timing: TimingConfig,
    handler: Handler,
    idle_deadline: float = float("inf"),
) -> None:
    """Card side: serve exactly one TPDU from the terminal."""
    header = channel.receive(5, idle_deadline)
    cla, ins, p1, p2, p3 = header
    kind = classify_sim(CommandApdu(cla, ins, p1, p2))
    if kind in _DATA_TO_CARD and p3 > 0:
        channel.send(bytes([ins]))  # ACK: send all command data
        data = channel.receive(p3, clock.now() + timing.work_waiting)
        cmd = CommandApdu(cla, ins, p1, p2, data=bytes(data))
    else:
        cmd = parse_command(bytes(header))  # 5-byte form: Le (0 -> 256)
    resp = _run_with_nulls(channel, clock, timing, handler, cmd)
    if resp.data and cmd.le:
        if len(resp.data) < cmd.le:
            # exact-length rule: tell the terminal to reissue with the
            # actual length instead of underfilling the transfer
            channel.send(bytes([0x6C, len(resp.data)]))
            return
        channel.send(bytes([ins]) + resp.data[: cmd.le])
    channel.send(bytes([resp.sw1, resp.sw2]))
