"""SIM Access Profile transport: message codec, a client that exposes a
remote phone's SIM as a backend, and a small server for testing."""

from .messages import (
    MsgId,
    ParamId,
    ResultCode,
    SapError,
    SapMessage,
    SapParam,
    decode_sap_message,
    encode_sap_message,
)
from .client import SapClient, SapClientError
from .server import SapServer, serve_sap_session

__all__ = [
    "MsgId",
    "ParamId",
    "ResultCode",
    "SapError",
    "SapMessage",
    "SapParam",
    "decode_sap_message",
    "encode_sap_message",
    "SapClient",
    "SapClientError",
    "SapServer",
    "serve_sap_session",
]
