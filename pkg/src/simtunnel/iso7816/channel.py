"""Half-duplex byte channel abstraction plus an in-memory loopback pair.

The channel never reorders bytes; strictly alternating turn-taking is the
protocol machines' responsibility.  The loopback pair supports delivery
latency and deterministic corruption injection for fault tests, and a
reset signal standing in for the electrical RST line.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, Optional

from ..clock import Clock


class ChannelError(Exception):
    pass


class ChannelTimeout(ChannelError):
    pass


class ChannelClosed(ChannelError):
    pass


class ResetIndication(ChannelError):
    """The peer pulled reset; the card side must restart with a fresh ATR."""


class HalfDuplexChannel:
    def send(self, data: bytes) -> None:
        raise NotImplementedError

    def receive(self, n: int, deadline: float) -> bytes:
        """Exactly n bytes, or ChannelTimeout once the deadline passes."""
        raise NotImplementedError

    def drain(self) -> None:
        """Discard all received and in-flight input (error recovery)."""
        raise NotImplementedError


# corrupt hook: (send_index, data) -> data; applied once per send() call
CorruptHook = Callable[[int, bytes], bytes]


class LoopbackEnd(HalfDuplexChannel):
    def __init__(self, clock: Clock) -> None:
        self.clock = clock
        self.peer: "LoopbackEnd" = None  # set by loopback_pair
        self._inbox: deque[tuple[float, int]] = deque()  # (available_at, byte)
        self._closed = False
        self._reset_pending = False
        self.latency = 0.0
        self.corrupt_hook: Optional[CorruptHook] = None
        self._send_index = 0

    def send(self, data: bytes) -> None:
        with self.clock.cond:
            if self.peer._closed:
                raise ChannelClosed("peer closed")
            if self.corrupt_hook is not None:
                data = self.corrupt_hook(self._send_index, data)
            self._send_index += 1
            at = self.clock.now() + self.latency
            for b in data:
                self.peer._inbox.append((at, b))
        self.clock.notify_all()

    def _ready_count(self) -> int:
        now = self.clock.now()
        n = 0
        for at, _ in self._inbox:
            if at > now:
                break
            n += 1
        return n

    def _interrupted(self) -> bool:
        return self._closed or self._reset_pending

    def receive(self, n: int, deadline: float) -> bytes:
        buf = bytearray()
        while True:
            with self.clock.cond:
                if self._reset_pending:
                    self._reset_pending = False
                    raise ResetIndication()
                take = min(self._ready_count(), n - len(buf))
                for _ in range(take):
                    buf.append(self._inbox.popleft()[1])
                if len(buf) == n:
                    return bytes(buf)
                if self._closed and not self._inbox:
                    raise ChannelClosed("channel closed")
                if self.clock.now() >= deadline:
                    raise ChannelTimeout("wanted %d bytes, got %d" % (n, len(buf)))
                in_flight = bool(self._inbox)
                next_at = self._inbox[0][0] if in_flight else None
            if in_flight:
                # bytes under way: wake when the next one lands
                self.clock.wait_for(self._interrupted, min(deadline, next_at))
            else:
                self.clock.wait_for(
                    lambda: self._interrupted() or bool(self._inbox), deadline
                )

    def drain(self) -> None:
        with self.clock.cond:
            self._inbox.clear()

    def reset_peer(self) -> None:
        """Signal reset to the other end and flush both directions."""
        with self.clock.cond:
            self._inbox.clear()
            self.peer._inbox.clear()
            self.peer._reset_pending = True
        self.clock.notify_all()

    def close(self) -> None:
        with self.clock.cond:
            self._closed = True
            self.peer._closed = True
        self.clock.notify_all()


class PushbackChannel(HalfDuplexChannel):
    """Wrapper adding single-lookahead: read a byte, then un-read it."""

    def __init__(self, inner: HalfDuplexChannel) -> None:
        self.inner = inner
        self._pending = bytearray()

    def unread(self, data: bytes) -> None:
        self._pending = bytearray(data) + self._pending

    def clear_pending(self) -> None:
        self._pending.clear()

    def send(self, data: bytes) -> None:
        self.inner.send(data)

    def receive(self, n: int, deadline: float) -> bytes:
        out = bytearray(self._pending[:n])
        del self._pending[: len(out)]
        if len(out) < n:
            try:
                out += self.inner.receive(n - len(out), deadline)
            except ResetIndication:
                self._pending.clear()
                raise
        return bytes(out)

    def drain(self) -> None:
        self._pending.clear()
        self.inner.drain()


def loopback_pair(
    clock: Clock,
    latency: float = 0.0,
    corrupt_hook: Optional[CorruptHook] = None,
) -> tuple[LoopbackEnd, LoopbackEnd]:
    """In-memory channel pair; the hook corrupts sends from end a only."""
    a, b = LoopbackEnd(clock), LoopbackEnd(clock)
    a.peer, b.peer = b, a
    a.latency = b.latency = latency
    a.corrupt_hook = corrupt_hook
    return a, b
