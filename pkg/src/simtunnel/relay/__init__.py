"""The SIM tunnel: framed wire protocol and the probe/provider roles.

Only APDUs and informational ATR content cross the tunnel; each endpoint
negotiates its card parameters locally.
"""

from .frames import (
    ErrorCode,
    FrameError,
    MsgType,
    OversizedFrame,
    RelayMessage,
    TruncatedStream,
    UnknownType,
    decode_message,
    decode_message_bytes,
    encode_message,
)
from .provider import EndpointPolicy, AtrMode, ProviderServer, serve_provider_session
from .probe import Probe, ProbeOptions, TunnelClient, TunnelClosed

__all__ = [
    "ErrorCode",
    "FrameError",
    "MsgType",
    "OversizedFrame",
    "RelayMessage",
    "TruncatedStream",
    "UnknownType",
    "decode_message",
    "decode_message_bytes",
    "encode_message",
    "EndpointPolicy",
    "AtrMode",
    "ProviderServer",
    "serve_provider_session",
    "Probe",
    "ProbeOptions",
    "TunnelClient",
    "TunnelClosed",
]
