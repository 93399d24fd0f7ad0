"""Probe role: presents a card to the local modem and forwards each APDU
over the tunnel.

The card session (ATR, PPS, T=0/T=1 framing, waiting-time extensions) is
handled entirely locally; only APDUs cross the wire.  Tunnel loss maps to
status 6F00 toward the modem, after which the card session halts.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from typing import Optional

from ..apdu import CommandApdu, ResponseApdu, parse_response, serialize_command
from ..clock import Clock
from ..iso7816.atr import AtrError, parse_atr
from ..iso7816.channel import ChannelError, HalfDuplexChannel
from ..iso7816.params import ProtocolParams, TimingConfig
from ..iso7816.session import CardSession
from ..rewrite import RewriteEngine
from ..trace.records import Recorder
from .frames import (
    FrameError,
    MsgType,
    RelayMessage,
    ROLE_PROBE,
    ROLE_PROVIDER,
    decode_message,
    encode_message,
    hello_payload,
    parse_hello,
)
from .provider import AtrMode


class TunnelClosed(Exception):
    pass


class TunnelProtocolError(TunnelClosed):
    pass


@dataclass(frozen=True)
class ProbeOptions:
    atr_mode: AtrMode = AtrMode.SYNTHETIC
    params: ProtocolParams = ProtocolParams()
    timing: TimingConfig = TimingConfig()
    latency: float = 0.0  # injected before reading each APDU response
    response_deadline: float = 30.0
    keepalive_interval: float = 10.0
    keepalive_misses: int = 3


class TunnelClient:
    """Request/response framing over the tunnel stream.

    A lock serializes users (APDU forwarding vs the keepalive thread) so
    strict alternation holds even with a background heartbeat.
    """

    def __init__(self, stream: HalfDuplexChannel, clock: Clock, session_id: Optional[bytes] = None) -> None:
        self.stream = stream
        self.clock = clock
        self.session_id = session_id if session_id is not None else os.urandom(16)
        self.lock = threading.Lock()
        self.closed = False
        self.last_activity = clock.now()

    def hello(self, deadline: float) -> None:
        with self.lock:
            self.stream.send(encode_message(RelayMessage(MsgType.HELLO, hello_payload(ROLE_PROBE, self.session_id))))
            reply = self._read(deadline)
            if reply.msg_type is not MsgType.HELLO:
                raise TunnelProtocolError("expected HELLO, got %s" % reply.msg_type.name)
            role, _ = parse_hello(reply.payload)
            if role != ROLE_PROVIDER:
                raise TunnelProtocolError("peer is not a provider")
            self.last_activity = self.clock.now()

    def request(self, msg: RelayMessage, expect: set, deadline: float, latency: float = 0.0) -> RelayMessage:
        with self.lock:
            self.stream.send(encode_message(msg))
            if latency > 0:
                self.clock.sleep(latency)
            while True:
                reply = self._read(deadline)
                if reply.msg_type in expect or reply.msg_type is MsgType.ERROR:
                    self.last_activity = self.clock.now()
                    return reply
                if reply.msg_type is MsgType.PONG:
                    continue  # late keepalive reply
                self.close()
                raise TunnelProtocolError("unexpected %s" % reply.msg_type.name)

    def send_only(self, msg: RelayMessage) -> None:
        with self.lock:
            self.stream.send(encode_message(msg))
            self.last_activity = self.clock.now()

    def ping(self, deadline: float) -> bool:
        try:
            reply = self.request(RelayMessage(MsgType.PING), {MsgType.PONG}, deadline)
        except TunnelClosed:
            return False
        return reply.msg_type is MsgType.PONG

    def _read(self, deadline: float) -> RelayMessage:
        if self.closed:
            raise TunnelClosed("tunnel is closed")
        try:
            return decode_message(self.stream, deadline)
        except (ChannelError, FrameError) as exc:
            self.close()
            raise TunnelClosed(str(exc)) from exc

    def close(self) -> None:
        self.closed = True
        close = getattr(self.stream, "close", None)
        if close is not None:
            close()
        self.clock.notify_all()


class Probe:
    def __init__(
        self,
        modem_channel: HalfDuplexChannel,
        tunnel_stream: HalfDuplexChannel,
        clock: Clock,
        options: ProbeOptions = ProbeOptions(),
        engine: Optional[RewriteEngine] = None,
        recorder: Optional[Recorder] = None,
    ) -> None:
        self.modem_channel = modem_channel
        self.clock = clock
        self.options = options
        self.engine = engine
        self.recorder = recorder
        self.tunnel = TunnelClient(tunnel_stream, clock)
        self._ctx = engine.new_context() if engine else None
        self._halt = False
        self._stopped = False

    def run(self) -> None:
        """Connect the tunnel and serve the modem until either side ends."""
        opts = self.options
        deadline = self.clock.now() + opts.response_deadline
        self.tunnel.hello(deadline)
        historical = b""
        if opts.atr_mode is AtrMode.MIRROR_HISTORICAL:
            reply = self.tunnel.request(
                RelayMessage(MsgType.ATR_REQUEST), {MsgType.ATR_RESPONSE}, deadline
            )
            if reply.msg_type is MsgType.ATR_RESPONSE:
                try:
                    historical = parse_atr(reply.payload).historical_bytes
                except AtrError:
                    historical = b""  # unparseable remote ATR: stay synthetic
        session = CardSession(
            self.modem_channel,
            self.clock,
            self._handle,
            params=opts.params,
            timing=opts.timing,
            historical=historical,
            on_reset=self._on_reset,
            stop=lambda: self._halt,
        )
        keeper = self.clock.spawn(self._keepalive_loop, name="keepalive")
        try:
            session.serve_forever()
        finally:
            self._stopped = True
            self.clock.notify_all()
            self.tunnel.close()
            keeper.join(timeout=5)
        if self.recorder:
            self.recorder.close()

    def _on_reset(self) -> None:
        try:
            self.tunnel.send_only(RelayMessage(MsgType.RESET))
        except ChannelError:
            self._halt = True

    def _handle(self, cmd: CommandApdu) -> ResponseApdu:
        raw = serialize_command(cmd)
        t_cmd = self.recorder.stamp() if self.recorder else 0
        sent = raw
        tags: tuple = ()
        if self.engine:
            verdict = self.engine.apply_command(raw, self._ctx)
            tags = verdict.tags
            if verdict.synthesized:
                if self.recorder:
                    self.recorder.add(
                        t_cmd, self.recorder.stamp(), raw, verdict.data, tags=tags
                    )
                return parse_response(verdict.data)
            sent = verdict.data

        try:
            reply = self.tunnel.request(
                RelayMessage(MsgType.APDU_REQUEST, sent),
                {MsgType.APDU_RESPONSE},
                self.clock.now() + self.options.response_deadline + self.options.latency,
                latency=self.options.latency,
            )
        except TunnelClosed:
            self._halt = True
            return ResponseApdu.from_sw(0x6F00)
        if reply.msg_type is MsgType.ERROR:
            resp_raw = b"\x6f\x00"
        else:
            resp_raw = reply.payload

        final = resp_raw
        if self.engine:
            rverdict = self.engine.apply_response(resp_raw, self._ctx)
            final = rverdict.data
            tags = tags + rverdict.tags
            changed_resp = rverdict.rewritten
        else:
            changed_resp = False
        if self.recorder:
            self.recorder.add(
                t_cmd,
                self.recorder.stamp(),
                sent,
                final,
                tags=tags,
                original_command=raw if sent != raw else None,
                original_response=resp_raw if changed_resp and final != resp_raw else None,
            )
        if len(final) < 2:
            # a rewrite or broken provider produced an impossible response;
            # fail open toward the modem
            if self.engine:
                self.engine.errors += 1
            return ResponseApdu.from_sw(0x6F00)
        return parse_response(final)

    def _keepalive_loop(self) -> None:
        opts = self.options
        if opts.keepalive_interval <= 0:
            return
        misses = 0
        while not self._stopped and not self.tunnel.closed:
            wake = self.tunnel.last_activity + opts.keepalive_interval
            self.clock.wait_for(
                lambda: self._stopped or self.tunnel.closed or self.clock.now() >= wake,
                wake,
            )
            if self._stopped or self.tunnel.closed:
                return
            if self.clock.now() < wake:
                continue  # activity moved the target
            if self.tunnel.ping(self.clock.now() + opts.keepalive_interval):
                misses = 0
            else:
                misses += 1
                if misses >= opts.keepalive_misses:
                    self.tunnel.close()
                    self._halt = True
                    return
