"""SAP server: serves a backend to SAP clients, mainly for tests and for
pairing the client against a local virtual card."""

from __future__ import annotations

import socket
import threading
from typing import Callable, Optional

from ..backend import BackendError, SimBackend
from ..clock import Clock, SystemClock
from ..iso7816.channel import ChannelError, HalfDuplexChannel
from ..relay.stream import SocketStream
from .messages import (
    ConnectionStatus,
    MAX_MSG_SIZE_MIN,
    MsgId,
    ParamId,
    ResultCode,
    SapError,
    SapMessage,
    SapParam,
    StatusChange,
    connect_resp,
    encode_sap_message,
    read_sap_message,
    status_ind,
)

DEFAULT_PORT = 7817


def serve_sap_session(
    stream: HalfDuplexChannel,
    backend: SimBackend,
    clock: Optional[Clock] = None,
    max_msg_size: int = 0xFFFF,
    counter_propose: Optional[int] = None,
) -> None:
    """Serve one SAP client until it disconnects or the stream closes.

    `counter_propose` forces a size renegotiation on the first connect,
    exercising the client's acceptance path.
    """
    clock = clock or SystemClock()
    inf = float("inf")

    def send(msg: SapMessage) -> None:
        stream.send(encode_sap_message(msg))

    try:
        while True:  # connect phase (may loop on size renegotiation)
            msg = read_sap_message(stream, inf)
            if msg.msg_id != MsgId.CONNECT_REQ:
                return
            proposed = int.from_bytes(msg.param(ParamId.MAX_MSG_SIZE), "big")
            if counter_propose is not None and proposed != counter_propose:
                send(connect_resp(ConnectionStatus.MAX_MSG_SIZE_UNSUPPORTED, counter_propose))
                continue
            if proposed < MAX_MSG_SIZE_MIN:
                send(connect_resp(ConnectionStatus.MAX_MSG_SIZE_TOO_SMALL, MAX_MSG_SIZE_MIN))
                continue
            send(connect_resp(ConnectionStatus.OK, min(proposed, max_msg_size)))
            break
        send(status_ind(StatusChange.CARD_RESET))

        while True:
            msg = read_sap_message(stream, inf)
            if msg.msg_id == MsgId.TRANSFER_ATR_REQ:
                send(
                    SapMessage(
                        MsgId.TRANSFER_ATR_RESP,
                        (
                            SapParam(ParamId.RESULT_CODE, bytes([ResultCode.OK])),
                            SapParam(ParamId.ATR, backend.atr()),
                        ),
                    )
                )
            elif msg.msg_id == MsgId.TRANSFER_APDU_REQ:
                try:
                    resp = backend.exchange(msg.param(ParamId.COMMAND_APDU))
                except BackendError:
                    send(
                        SapMessage(
                            MsgId.TRANSFER_APDU_RESP,
                            (SapParam(ParamId.RESULT_CODE, bytes([ResultCode.CARD_NOT_ACCESSIBLE])),),
                        )
                    )
                    continue
                send(
                    SapMessage(
                        MsgId.TRANSFER_APDU_RESP,
                        (
                            SapParam(ParamId.RESULT_CODE, bytes([ResultCode.OK])),
                            SapParam(ParamId.RESPONSE_APDU, resp),
                        ),
                    )
                )
            elif msg.msg_id == MsgId.RESET_SIM_REQ:
                backend.reset()
                send(
                    SapMessage(
                        MsgId.RESET_SIM_RESP,
                        (SapParam(ParamId.RESULT_CODE, bytes([ResultCode.OK])),),
                    )
                )
                send(status_ind(StatusChange.CARD_RESET))
            elif msg.msg_id == MsgId.DISCONNECT_REQ:
                send(SapMessage(MsgId.DISCONNECT_RESP))
                return
            else:
                send(SapMessage(MsgId.ERROR_RESP))
    except (ChannelError, SapError):
        return


class SapServer:
    """TCP front for serve_sap_session; one backend instance per client."""

    def __init__(
        self,
        backend_factory: Callable[[], SimBackend],
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        counter_propose: Optional[int] = None,
    ) -> None:
        self.backend_factory = backend_factory
        self.counter_propose = counter_propose
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen()
        self._stopping = False
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def _accept_loop(self) -> None:
        while not self._stopping:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(
                target=self._serve_one, args=(conn,), daemon=True
            ).start()

    def _serve_one(self, conn: socket.socket) -> None:
        stream = SocketStream(conn)
        try:
            serve_sap_session(
                stream,
                self.backend_factory(),
                SystemClock(),
                counter_propose=self.counter_propose,
            )
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
