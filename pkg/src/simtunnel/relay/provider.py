"""Provider role: owns the SIM backend and answers tunnel requests.

One session per connection; each session gets its own backend instance
from the factory, so concurrent probes never share card state.  A backend
that exceeds the response deadline earns the requester an ERROR(timeout)
while the session stays up.
"""

from __future__ import annotations

import enum
import socket
import threading
from dataclasses import dataclass
from typing import Callable, Optional

from ..backend import BackendError, BackendTimeout, MalformedApdu, SimBackend
from ..clock import Clock, SystemClock
from ..iso7816.channel import ChannelClosed, HalfDuplexChannel
from ..trace.records import Recorder
from .frames import (
    ErrorCode,
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
from .stream import SocketStream

DEFAULT_PORT = 7816


class AtrMode(enum.Enum):
    SYNTHETIC = "synthetic"
    MIRROR_HISTORICAL = "mirror_historical"


@dataclass(frozen=True)
class EndpointPolicy:
    atr_mode: AtrMode = AtrMode.SYNTHETIC
    null_interval: float = 0.2
    response_deadline: float = 30.0


@dataclass
class SessionStats:
    apdus: int = 0
    errors: int = 0
    resets: int = 0
    pings: int = 0
    session_id: bytes = b""


def _call_with_deadline(clock: Clock, fn: Callable[[], bytes], deadline: float) -> bytes:
    """Run fn on a worker thread; BackendTimeout once the deadline passes.
    A late result from an abandoned worker is discarded."""
    box: dict = {}

    def work():
        try:
            box["result"] = fn()
        except BaseException as exc:  # noqa: BLE001 - relayed to the caller
            box["error"] = exc
        clock.notify_all()

    clock.spawn(work, name="backend-exchange")
    if not clock.wait_for(lambda: bool(box), deadline):
        raise BackendTimeout("backend exceeded the response deadline")
    if "error" in box:
        raise box["error"]
    return box["result"]


def serve_provider_session(
    stream: HalfDuplexChannel,
    backend: SimBackend,
    clock: Optional[Clock] = None,
    policy: EndpointPolicy = EndpointPolicy(),
    recorder: Optional[Recorder] = None,
) -> SessionStats:
    """Serve one tunnel session until the stream closes."""
    clock = clock or SystemClock()
    stats = SessionStats()
    inf = float("inf")

    try:
        first = decode_message(stream, inf)
        if first.msg_type is not MsgType.HELLO:
            return stats
        role, session_id = parse_hello(first.payload)
        if role != ROLE_PROBE:
            return stats
        stats.session_id = session_id
        # echo the probe's session id so both sides' traces correlate
        stream.send(encode_message(RelayMessage(MsgType.HELLO, hello_payload(ROLE_PROVIDER, session_id))))

        while True:
            msg = decode_message(stream, inf)
            if msg.msg_type is MsgType.PING:
                stats.pings += 1
                stream.send(encode_message(RelayMessage(MsgType.PONG, msg.payload)))
            elif msg.msg_type is MsgType.ATR_REQUEST:
                stream.send(encode_message(RelayMessage(MsgType.ATR_RESPONSE, backend.atr())))
            elif msg.msg_type is MsgType.RESET:
                backend.reset()
                stats.resets += 1
            elif msg.msg_type is MsgType.APDU_REQUEST:
                t_cmd = recorder.stamp() if recorder else 0
                try:
                    resp = _call_with_deadline(
                        clock,
                        lambda cmd=bytes(msg.payload): backend.exchange(cmd),
                        clock.now() + policy.response_deadline,
                    )
                except BackendTimeout:
                    stats.errors += 1
                    stream.send(encode_message(RelayMessage(MsgType.ERROR, bytes([ErrorCode.BACKEND_TIMEOUT]))))
                    continue
                except MalformedApdu:
                    stats.errors += 1
                    stream.send(encode_message(RelayMessage(MsgType.ERROR, bytes([ErrorCode.MALFORMED_APDU]))))
                    continue
                except BackendError:
                    stats.errors += 1
                    stream.send(encode_message(RelayMessage(MsgType.ERROR, bytes([ErrorCode.BACKEND_UNAVAILABLE]))))
                    continue
                stream.send(encode_message(RelayMessage(MsgType.APDU_RESPONSE, resp)))
                stats.apdus += 1
                if recorder:
                    recorder.add(t_cmd, recorder.stamp(), msg.payload, resp)
            else:
                # out-of-order response/hello: fault the peer and hang up
                stats.errors += 1
                stream.send(encode_message(RelayMessage(MsgType.ERROR, bytes([ErrorCode.MALFORMED_APDU]))))
                return stats
    except (ChannelClosed, FrameError):
        return stats


class ProviderServer:
    """TCP front for the provider role."""

    def __init__(
        self,
        backend_factory: Callable[[], SimBackend],
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        policy: EndpointPolicy = EndpointPolicy(),
        recorder: Optional[Recorder] = None,
    ) -> None:
        self.backend_factory = backend_factory
        self.policy = policy
        self.recorder = recorder
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen()
        self._stopping = False
        self._thread: Optional[threading.Thread] = None
        self.sessions: list[SessionStats] = []

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self._accept_loop()

    def _accept_loop(self) -> None:
        while not self._stopping:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_one, args=(conn,), daemon=True).start()

    def _serve_one(self, conn: socket.socket) -> None:
        stream = SocketStream(conn)
        try:
            stats = serve_provider_session(
                stream, self.backend_factory(), SystemClock(), self.policy,
                recorder=self.recorder,
            )
            self.sessions.append(stats)
        finally:
            stream.close()

    def stop(self) -> None:
        self._stopping = True
        try:
            # close() alone does not wake a thread blocked in accept()
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        if self._thread is not None:
            self._thread.join(timeout=5)
