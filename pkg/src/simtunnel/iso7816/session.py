"""Card-side session: present an ATR, answer PPS, and serve commands.

This is what the modem talks to, whether the handler behind it is a local
virtual card or the tunnel to a remote provider.
"""

from __future__ import annotations

from typing import Callable, Optional

from ..apdu import CommandApdu, ResponseApdu
from ..clock import Clock
from .atr import build_atr
from .channel import (
    ChannelClosed,
    HalfDuplexChannel,
    PushbackChannel,
    ResetIndication,
)
from .params import Protocol, ProtocolParams, TimingConfig
from .pps import PPSS, PpsSide, pps_exchange
from .t0 import t0_serve_command
from .t1 import T1Card

Handler = Callable[[CommandApdu], ResponseApdu]


class CardSession:
    def __init__(
        self,
        channel: HalfDuplexChannel,
        clock: Clock,
        handler: Handler,
        params: ProtocolParams = ProtocolParams(),
        timing: TimingConfig = TimingConfig(),
        historical: bytes = b"",
        on_reset: Optional[Callable[[], None]] = None,
        block_log: Optional[list] = None,
        stop: Optional[Callable[[], bool]] = None,
    ) -> None:
        self.channel = PushbackChannel(channel)
        self.clock = clock
        self.handler = handler
        self.params = params
        self.timing = timing
        self.historical = historical
        self.on_reset = on_reset
        self.block_log = block_log
        self.stop = stop

    @property
    def atr_bytes(self) -> bytes:
        return build_atr(self.params, self.historical)

    def serve_forever(self) -> None:
        """Serve until the channel closes.  A reset restarts with a fresh
        ATR; protocol errors propagate to the caller."""
        while True:
            try:
                self._session_once()
            except ResetIndication:
                if self.on_reset:
                    self.on_reset()
                continue
            except ChannelClosed:
                return

    def _session_once(self) -> None:
        self.channel.clear_pending()
        self.channel.send(self.atr_bytes)
        t1 = self._make_t1()
        while True:
            if self.stop is not None and self.stop():
                raise ChannelClosed("session stopped")
            first = self.channel.receive(1, float("inf"))
            self.channel.unread(first)
            if first[0] == PPSS:
                self.params = pps_exchange(
                    self.params, self.channel, self.clock, PpsSide.RESPONDER
                )
                t1 = self._make_t1()
                continue
            if self.params.active_protocol is Protocol.T1:
                t1.serve_command(self.handler)
            else:
                t0_serve_command(self.channel, self.clock, self.timing, self.handler)

    def _make_t1(self) -> Optional[T1Card]:
        if self.params.active_protocol is not Protocol.T1:
            return None
        return T1Card(
            self.channel,
            self.clock,
            self.timing,
            ifsc=self.params.ifsc,
            block_log=self.block_log,
        )
