"""Scripted virtual modem: the terminal-side stand-in used for desk-scale
sessions against a card-side endpoint (local vcard or tunnel probe).

Script grammar (one statement per line, '#' comments):

    <hex apdu>       issue a command APDU
    expect <hex sw>  assert the status word of the previous response
    reset            pull reset and re-read the ATR

See docs/scripts.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .apdu import CommandApdu, ResponseApdu, parse_command, parse_response, serialize_command
from .clock import Clock
from .hexutil import b2h, h2b
from .iso7816.atr import Atr, read_atr
from .iso7816.channel import HalfDuplexChannel, LoopbackEnd
from .iso7816.params import Protocol, ProtocolParams, TimingConfig
from .iso7816.pps import PpsSide, pps_exchange
from .iso7816.t0 import t0_exchange_terminal
from .iso7816.t1 import T1Terminal


class ModemError(Exception):
    pass


class VirtualModem:
    def __init__(
        self,
        channel: HalfDuplexChannel,
        clock: Clock,
        protocol: Protocol = Protocol.T0,
        timing: TimingConfig = TimingConfig(),
        ifsc: int = 32,
        block_log: list | None = None,
    ) -> None:
        self.channel = channel
        self.clock = clock
        self.protocol = protocol
        self.timing = timing
        self.ifsc = ifsc
        self.block_log = block_log
        self.atr: Atr | None = None
        self._t1: T1Terminal | None = None
        # (command bytes, response bytes) pairs, for endpoint-trace comparison
        self.log: list[tuple[bytes, bytes]] = []

    def connect(self, hard_reset: bool = False, timeout: float = 5.0) -> Atr:
        """Read the card's ATR (optionally after pulling reset)."""
        if hard_reset and isinstance(self.channel, LoopbackEnd):
            self.channel.reset_peer()
        self.atr, _raw = read_atr(self.channel, self.clock.now() + timeout)
        if self.protocol not in self.atr.offered_protocols:
            raise ModemError("card does not offer %s" % self.protocol.name)
        if self.protocol is Protocol.T1:
            self._t1 = T1Terminal(
                self.channel, self.clock, self.timing,
                ifsc=self.ifsc, block_log=self.block_log,
            )
        return self.atr

    def negotiate(self, params: ProtocolParams) -> ProtocolParams:
        return pps_exchange(params, self.channel, self.clock, PpsSide.INITIATOR)

    def exchange(self, cmd: CommandApdu) -> ResponseApdu:
        if self.atr is None:
            raise ModemError("connect() first")
        if self.protocol is Protocol.T1:
            raw = self._t1.exchange(serialize_command(cmd))
            resp = parse_response(raw)
        else:
            resp = t0_exchange_terminal(cmd, self.channel, self.clock, self.timing)
        self.log.append((serialize_command(cmd), raw_response(resp)))
        return resp

    def exchange_raw(self, raw: bytes) -> ResponseApdu:
        return self.exchange(parse_command(raw))


def raw_response(resp: ResponseApdu) -> bytes:
    return resp.data + bytes([resp.sw1, resp.sw2])


@dataclass
class ScriptStep:
    line_no: int
    command: bytes
    response: bytes


@dataclass
class ScriptResult:
    steps: list[ScriptStep] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_script(modem: VirtualModem, text: str) -> ScriptResult:
    """Execute a modem script; expectation failures are collected, not fatal."""
    result = ScriptResult()
    last: ResponseApdu | None = None
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() == "reset":
            modem.connect(hard_reset=True)
            last = None
            continue
        if line.lower().startswith("expect"):
            want = h2b(line.split(None, 1)[1])
            if last is None:
                result.failures.append("line %d: expect before any command" % line_no)
            elif bytes([last.sw1, last.sw2]) != want:
                result.failures.append(
                    "line %d: expected SW %s, got %02x%02x"
                    % (line_no, b2h(want), last.sw1, last.sw2)
                )
            continue
        cmd_bytes = h2b(line)
        last = modem.exchange_raw(cmd_bytes)
        result.steps.append(ScriptStep(line_no, cmd_bytes, raw_response(last)))
    return result
