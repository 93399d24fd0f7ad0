"""Byte-stream transports for the tunnel.

`SocketStream` adapts a TCP socket to the half-duplex channel interface
used by the frame codec; deadlines are absolute monotonic times.  For
tests, `loopback_pair` from the channel module serves as the in-memory
equivalent under a controllable clock.
"""

from __future__ import annotations

import socket
import time

from ..iso7816.channel import ChannelClosed, ChannelTimeout, HalfDuplexChannel


class SocketStream(HalfDuplexChannel):
    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from None

    def receive(self, n: int, deadline: float) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ChannelTimeout("wanted %d bytes, got %d" % (n, len(buf)))
            self.sock.settimeout(None if remaining == float("inf") else remaining)
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout:
                raise ChannelTimeout("wanted %d bytes, got %d" % (n, len(buf))) from None
            except OSError as exc:
                raise ChannelClosed(str(exc)) from None
            if not chunk:
                raise ChannelClosed("connection closed")
            buf += chunk
        return bytes(buf)

    def drain(self) -> None:
        pass  # framed transport: recovery is reconnection, not draining

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def connect_stream(host: str, port: int, timeout: float = 10.0) -> SocketStream:
    return SocketStream(socket.create_connection((host, port), timeout=timeout))
