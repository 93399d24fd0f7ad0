"""T=1 block protocol: framing, LRC epilogue, chaining, retransmission,
waiting-time extension, and resynchronization.

Frames are NAD PCB LEN INF LRC with NAD fixed to 0x00.  Error recovery is
symmetric: a receiver that sees a broken frame drains its input and asks
for retransmission with R(CRC); a sender that receives an R-block naming
its outstanding block resends it verbatim.  After the configured number of
retries the terminal resynchronizes once, then fails hard.

While a card-side handler is pending, the card emits S(WTX request) with
multiplier 1 on the heartbeat cadence; each one buys the terminal a fresh
block waiting time, so total latency is unbounded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Union

from ..apdu import CommandApdu, ResponseApdu, parse_command, serialize_response
from ..clock import Clock
from .channel import HalfDuplexChannel, ChannelTimeout
from .params import TimingConfig

NAD = 0x00


def lrc(data: bytes) -> int:
    """XOR fold of all octets (0x00 for the empty string)."""
    acc = 0
    for b in data:
        acc ^= b
    return acc


class T1DecodeError(ValueError):
    pass


class BadLrc(T1DecodeError):
    pass


class BadLength(T1DecodeError):
    pass


class BadPcb(T1DecodeError):
    pass


class T1Error(Exception):
    pass


class ExchangeAborted(T1Error):
    pass


class ResynchFailed(T1Error):
    pass


class T1Timeout(T1Error):
    pass


class T1ProtocolViolation(T1Error):
    pass


class RErr(enum.Enum):
    OK = 0
    CRC_LRC = 1
    OTHER = 2


class SOp(enum.Enum):
    RESYNCH = 0
    IFS = 1
    ABORT = 2
    WTX = 3


@dataclass(frozen=True)
class IBlock:
    seq: int
    more: bool


@dataclass(frozen=True)
class RBlock:
    seq: int
    err: RErr


@dataclass(frozen=True)
class SBlock:
    op: SOp
    is_response: bool


BlockKind = Union[IBlock, RBlock, SBlock]


def decode_pcb(pcb: int) -> BlockKind:
    """Pure, bijective decode of defined PCB encodings."""
    if pcb & 0x80 == 0:
        if pcb & 0x1F:
            raise BadPcb("I-block PCB 0x%02X has reserved bits set" % pcb)
        return IBlock(seq=(pcb >> 6) & 1, more=bool(pcb & 0x20))
    if pcb & 0xC0 == 0x80:
        if pcb & 0x2F not in (0, 1, 2):
            raise BadPcb("R-block PCB 0x%02X undefined" % pcb)
        return RBlock(seq=(pcb >> 4) & 1, err=RErr(pcb & 0x0F))
    op = pcb & 0x1F
    if op > 3:
        raise BadPcb("S-block PCB 0x%02X undefined" % pcb)
    return SBlock(op=SOp(op), is_response=bool(pcb & 0x20))


def encode_pcb(kind: BlockKind) -> int:
    if isinstance(kind, IBlock):
        return (kind.seq << 6) | (0x20 if kind.more else 0)
    if isinstance(kind, RBlock):
        return 0x80 | (kind.seq << 4) | kind.err.value
    return 0xC0 | (0x20 if kind.is_response else 0) | kind.op.value


@dataclass(frozen=True)
class T1Block:
    nad: int
    pcb: int
    inf: bytes

    @property
    def kind(self) -> BlockKind:
        return decode_pcb(self.pcb)

    @property
    def lrc(self) -> int:
        return lrc(bytes([self.nad, self.pcb, len(self.inf)]) + self.inf)

    def encode(self) -> bytes:
        if len(self.inf) > 254:
            raise BadLength("INF longer than 254 bytes")
        body = bytes([self.nad, self.pcb, len(self.inf)]) + self.inf
        return body + bytes([lrc(body)])


def make_block(kind: BlockKind, inf: bytes = b"") -> T1Block:
    return T1Block(NAD, encode_pcb(kind), inf)


def decode_block(raw: bytes) -> T1Block:
    if len(raw) < 4:
        raise BadLength("frame shorter than 4 bytes")
    nad, pcb, ln = raw[0], raw[1], raw[2]
    if ln == 255:
        raise BadLength("LEN=255 is invalid")
    if len(raw) != ln + 4:
        raise BadLength("LEN=%d but frame is %d bytes" % (ln, len(raw)))
    if lrc(raw) != 0:
        raise BadLrc("LRC mismatch")
    decode_pcb(pcb)  # undefined encodings are a decode error
    return T1Block(nad, pcb, bytes(raw[3:-1]))


class _BadFrame(Exception):
    pass


class _NeedResynch(Exception):
    pass


class _ChainRestart(Exception):
    """Peer resynchronized; abandon any partially received chain."""


Handler = Callable[[CommandApdu], ResponseApdu]


class T1Endpoint:
    """One side of a T=1 session; sequence state persists across APDUs."""

    def __init__(
        self,
        channel: HalfDuplexChannel,
        clock: Clock,
        timing: TimingConfig = TimingConfig(),
        ifsc: int = 32,
        block_log: Optional[list] = None,
    ) -> None:
        self.channel = channel
        self.clock = clock
        self.timing = timing
        self.ifsc = ifsc       # largest INF the peer accepts from us
        self.block_log = block_log
        self.ns = 0            # our next send-sequence bit
        self.nr = 0            # expected peer send-sequence bit
        self._last_sent: Optional[bytes] = None
        self._wtx_mult = 1

    # -- raw I/O ----------------------------------------------------------

    def _send_raw(self, raw: bytes) -> None:
        if self.block_log is not None:
            self.block_log.append(("tx", raw))
        self.channel.send(raw)

    def _send_block(self, block: T1Block) -> None:
        raw = block.encode()
        self._last_sent = raw
        self._send_raw(raw)

    def _read_block(self, deadline: float) -> T1Block:
        prologue = self.channel.receive(3, deadline)
        ln = prologue[2]
        if ln == 255:
            raise _BadFrame()
        try:
            rest = self.channel.receive(
                ln + 1, self.clock.now() + self.timing.char_waiting
            )
        except ChannelTimeout:
            raise _BadFrame() from None
        raw = bytes(prologue) + rest
        try:
            block = decode_block(raw)
        except T1DecodeError:
            raise _BadFrame() from None
        if self.block_log is not None:
            self.block_log.append(("rx", raw))
        return block

    # -- receive loop with recovery --------------------------------------

    def _await(
        self,
        ack_seq: Optional[int] = None,
        first_deadline: Optional[float] = None,
    ) -> T1Block:
        """Next meaningful block: an in-sequence I-block, the awaited R-ack,
        or an S-response.  Bad frames, retransmission requests, duplicates,
        and incoming S-requests are absorbed here.
        """
        attempts = 0
        while True:
            timeout = self.timing.block_waiting * self._wtx_mult
            self._wtx_mult = 1
            deadline = first_deadline if first_deadline is not None else (
                self.clock.now() + timeout
            )
            try:
                blk = self._read_block(deadline)
            except _BadFrame:
                first_deadline = None
                attempts = self._bump(attempts)
                self.channel.drain()
                self._send_block(make_block(RBlock(self.nr, RErr.CRC_LRC)))
                continue
            except ChannelTimeout:
                if first_deadline is not None:
                    raise  # idle timeout is the caller's business
                attempts = self._bump(attempts)
                self._send_block(make_block(RBlock(self.nr, RErr.OTHER)))
                continue
            first_deadline = None
            kind = blk.kind
            if isinstance(kind, SBlock):
                if kind.is_response:
                    return blk
                if kind.op is SOp.WTX:
                    mult = blk.inf[0] if blk.inf else 1
                    self._send_block(make_block(SBlock(SOp.WTX, True), blk.inf))
                    self._wtx_mult = max(1, mult)
                    continue
                if kind.op is SOp.IFS:
                    if blk.inf:
                        self.ifsc = max(1, min(254, blk.inf[0]))
                    self._send_block(make_block(SBlock(SOp.IFS, True), blk.inf))
                    continue
                if kind.op is SOp.ABORT:
                    self._send_block(make_block(SBlock(SOp.ABORT, True)))
                    raise ExchangeAborted()
                # RESYNCH request: acknowledge, restart numbering, and force
                # the caller to drop any partially assembled chain
                self._send_block(make_block(SBlock(SOp.RESYNCH, True)))
                self.ns = self.nr = 0
                raise _ChainRestart()
            if isinstance(kind, RBlock):
                if ack_seq is not None and kind.seq == ack_seq:
                    return blk
                # peer missed our last block; repeat it verbatim
                attempts = self._bump(attempts)
                if self._last_sent is not None:
                    self._send_raw(self._last_sent)
                continue
            # I-block
            if kind.seq == self.nr:
                return blk
            # duplicate of an already-received block: our ack was lost
            attempts = self._bump(attempts)
            if self._last_sent is not None:
                self._send_raw(self._last_sent)
            continue

    def _bump(self, attempts: int) -> int:
        attempts += 1
        if attempts > self.timing.retries:
            raise _NeedResynch()
        return attempts

    # -- shared helpers ---------------------------------------------------

    def _chunks(self, payload: bytes) -> list[bytes]:
        return [payload[i : i + self.ifsc] for i in range(0, len(payload), self.ifsc)] or [b""]

    def _send_chained(self, payload: bytes, last_has_reply: bool) -> Optional[T1Block]:
        """Send payload as an I-block chain.  Returns the first reply block
        after the final chunk when last_has_reply, else None."""
        chunks = self._chunks(payload)
        for i, chunk in enumerate(chunks):
            more = i < len(chunks) - 1
            self._send_block(make_block(IBlock(self.ns, more), chunk))
            if more:
                blk = self._await(ack_seq=self.ns ^ 1)
                if not isinstance(blk.kind, RBlock):
                    raise _NeedResynch()
                self.ns ^= 1
            elif last_has_reply:
                blk = self._await()
                if not isinstance(blk.kind, IBlock):
                    raise _NeedResynch()
                self.ns ^= 1
                return blk
            else:
                self.ns ^= 1
        return None

    def _receive_chain(self, first: T1Block) -> bytes:
        buf = bytearray(first.inf)
        blk = first
        self.nr ^= 1
        while blk.kind.more:
            self._send_block(make_block(RBlock(self.nr, RErr.OK)))
            blk = self._await()
            if not isinstance(blk.kind, IBlock):
                raise _NeedResynch()
            buf += blk.inf
            self.nr ^= 1
        return bytes(buf)


class T1Terminal(T1Endpoint):
    def exchange(self, payload: bytes) -> bytes:
        """One command/response round trip; resynchronizes once on failure."""
        try:
            return self._exchange_once(payload)
        except (_NeedResynch, _ChainRestart):
            self.resynch()
        try:
            return self._exchange_once(payload)
        except (_NeedResynch, _ChainRestart):
            raise T1Timeout("exchange failed after resynchronization") from None

    def _exchange_once(self, payload: bytes) -> bytes:
        first = self._send_chained(payload, last_has_reply=True)
        return self._receive_chain(first)

    def resynch(self) -> None:
        for _ in range(self.timing.retries + 1):
            self._send_block(make_block(SBlock(SOp.RESYNCH, False)))
            try:
                blk = self._await()
            except (_NeedResynch, ChannelTimeout):
                continue
            kind = blk.kind
            if isinstance(kind, SBlock) and kind.is_response and kind.op is SOp.RESYNCH:
                self.ns = self.nr = 0
                return
        raise ResynchFailed("no resynch response from card")


class T1Card(T1Endpoint):
    def serve_command(self, handler: Handler, idle_deadline: float = float("inf")) -> None:
        """Receive one command chain, run the handler under a WTX heartbeat,
        send the response chain."""
        while True:
            try:
                blk = self._await(first_deadline=idle_deadline)
                if not isinstance(blk.kind, IBlock):
                    raise T1ProtocolViolation("expected command I-block")
                payload = self._receive_chain(blk)
                break
            except _ChainRestart:
                continue
        resp = self._run_with_wtx(handler, parse_command(payload))
        try:
            self._send_chained(serialize_response(resp), last_has_reply=False)
        except _NeedResynch:
            raise T1Timeout("response chain abandoned") from None

    def _run_with_wtx(self, handler: Handler, cmd: CommandApdu) -> ResponseApdu:
        box: list = []

        def work():
            try:
                box.append(("ok", handler(cmd)))
            except BaseException as exc:
                box.append(("err", exc))
            finally:
                self.clock.notify_all()

        self.clock.spawn(work, name="t1-handler")
        while not self.clock.wait_for(
            lambda: bool(box), self.clock.now() + self.timing.null_interval
        ):
            self._send_block(make_block(SBlock(SOp.WTX, False), b"\x01"))
            blk = self._await()
            kind = blk.kind
            if not (isinstance(kind, SBlock) and kind.is_response and kind.op is SOp.WTX):
                raise T1ProtocolViolation("expected WTX response")
        status, value = box[0]
        if status == "err":
            raise value
        return value
