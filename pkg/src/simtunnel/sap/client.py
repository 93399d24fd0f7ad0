"""SAP client: drives a remote SIM server and exposes it as a backend.

Connection setup negotiates MaxMsgSize: the server may counter-propose a
smaller size, which the client accepts as long as it is at least 512
octets.  Unsolicited status indications (card reset/removed) are handled
wherever they arrive in the stream.
"""

from __future__ import annotations

from typing import Optional

from ..backend import BackendError, BackendUnavailable, SimBackend
from ..clock import Clock, SystemClock
from ..iso7816.channel import ChannelError, HalfDuplexChannel
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
    connect_req,
    encode_sap_message,
    read_sap_message,
)


class SapClientError(BackendError):
    pass


class SapClient(SimBackend):
    def __init__(
        self,
        stream: HalfDuplexChannel,
        clock: Optional[Clock] = None,
        max_msg_size: int = 0xFFFF,
        response_deadline: float = 30.0,
    ) -> None:
        self.stream = stream
        self.clock = clock or SystemClock()
        self.max_msg_size = max_msg_size
        self.response_deadline = response_deadline
        self.connected = False
        self.card_available = False

    # -- connection -------------------------------------------------------

    def connect(self) -> None:
        deadline = self.clock.now() + self.response_deadline
        self._send(connect_req(self.max_msg_size))
        resp = self._expect(MsgId.CONNECT_RESP, deadline)
        status = resp.param(ParamId.CONNECTION_STATUS)[0]
        if status in (
            ConnectionStatus.MAX_MSG_SIZE_UNSUPPORTED,
            ConnectionStatus.MAX_MSG_SIZE_TOO_SMALL,
        ):
            counter = resp.maybe_param(ParamId.MAX_MSG_SIZE)
            if counter is None:
                raise SapClientError("size rejected without a counter-proposal")
            proposed = int.from_bytes(counter, "big")
            if proposed < MAX_MSG_SIZE_MIN:
                raise SapClientError("counter-proposed MaxMsgSize %d below %d" % (proposed, MAX_MSG_SIZE_MIN))
            self.max_msg_size = proposed
            self._send(connect_req(proposed))
            resp = self._expect(MsgId.CONNECT_RESP, deadline)
            status = resp.param(ParamId.CONNECTION_STATUS)[0]
        if status != ConnectionStatus.OK:
            raise SapClientError("connection refused, status 0x%02X" % status)
        self.connected = True
        # the server announces the card with a reset indication
        self._wait_card(deadline)

    def _wait_card(self, deadline: float) -> None:
        while not self.card_available:
            msg = self._read(deadline)
            self._handle_unsolicited(msg)

    def disconnect(self) -> None:
        if not self.connected:
            return
        deadline = self.clock.now() + self.response_deadline
        self._send(SapMessage(MsgId.DISCONNECT_REQ))
        try:
            self._expect(MsgId.DISCONNECT_RESP, deadline)
        except (ChannelError, SapError):
            pass
        self.connected = False

    # -- SimBackend -------------------------------------------------------

    def atr(self) -> bytes:
        resp = self._rpc(SapMessage(MsgId.TRANSFER_ATR_REQ), MsgId.TRANSFER_ATR_RESP)
        self._check_result(resp)
        return resp.param(ParamId.ATR)

    def exchange(self, command: bytes) -> bytes:
        msg = SapMessage(
            MsgId.TRANSFER_APDU_REQ,
            (SapParam(ParamId.COMMAND_APDU, bytes(command)),),
        )
        resp = self._rpc(msg, MsgId.TRANSFER_APDU_RESP)
        self._check_result(resp)
        return resp.param(ParamId.RESPONSE_APDU)

    def reset(self) -> None:
        resp = self._rpc(SapMessage(MsgId.RESET_SIM_REQ), MsgId.RESET_SIM_RESP)
        self._check_result(resp)

    # -- plumbing ---------------------------------------------------------

    def _check_result(self, msg: SapMessage) -> None:
        code = msg.param(ParamId.RESULT_CODE)[0]
        if code != ResultCode.OK:
            raise BackendUnavailable("result code 0x%02X" % code)

    def _rpc(self, msg: SapMessage, expect_id: int) -> SapMessage:
        if not self.connected:
            raise BackendUnavailable("not connected")
        self._send(msg)
        return self._expect(expect_id, self.clock.now() + self.response_deadline)

    def _expect(self, expect_id: int, deadline: float) -> SapMessage:
        while True:
            msg = self._read(deadline)
            if msg.msg_id == expect_id:
                return msg
            if msg.msg_id == MsgId.ERROR_RESP:
                raise BackendUnavailable("server reported an error")
            self._handle_unsolicited(msg)

    def _handle_unsolicited(self, msg: SapMessage) -> None:
        if msg.msg_id == MsgId.STATUS_IND:
            change = msg.param(ParamId.STATUS_CHANGE)[0]
            if change in (StatusChange.CARD_RESET, StatusChange.CARD_INSERTED, StatusChange.CARD_RECOVERED):
                self.card_available = True
            else:
                self.card_available = False
        elif msg.msg_id == MsgId.DISCONNECT_IND:
            self.connected = False
            raise BackendUnavailable("server disconnected")
        else:
            raise SapClientError("unexpected message 0x%02X" % msg.msg_id)

    def _send(self, msg: SapMessage) -> None:
        data = encode_sap_message(msg)
        if len(data) > self.max_msg_size:
            raise SapClientError("message of %d octets exceeds MaxMsgSize %d" % (len(data), self.max_msg_size))
        try:
            self.stream.send(data)
        except ChannelError as exc:
            self.connected = False
            raise BackendUnavailable(str(exc)) from exc

    def _read(self, deadline: float) -> SapMessage:
        try:
            return read_sap_message(self.stream, deadline)
        except ChannelError as exc:
            self.connected = False
            raise BackendUnavailable(str(exc)) from exc
