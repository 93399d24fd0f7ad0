"""ISO 7816-3 transmission-protocol core.

ATR parse/build, PPS negotiation, the T=0 procedure-byte machine, and the
T=1 block protocol with waiting-time extension, all over an abstract
half-duplex byte channel.  Each tunnel endpoint runs its own instance and
negotiates parameters locally; only APDUs leave this layer.
"""

from .params import ProtocolParams, TimingConfig, Protocol, lookup_fidi, encode_fidi, ReservedFiDi
from .atr import Atr, Convention, parse_atr, build_atr, read_atr
from .channel import (
    HalfDuplexChannel,
    LoopbackEnd,
    loopback_pair,
    ChannelError,
    ChannelTimeout,
    ChannelClosed,
    ResetIndication,
)
from .t1 import lrc

__all__ = [
    "ProtocolParams",
    "TimingConfig",
    "Protocol",
    "lookup_fidi",
    "encode_fidi",
    "ReservedFiDi",
    "Atr",
    "Convention",
    "parse_atr",
    "build_atr",
    "read_atr",
    "HalfDuplexChannel",
    "LoopbackEnd",
    "loopback_pair",
    "ChannelError",
    "ChannelTimeout",
    "ChannelClosed",
    "ResetIndication",
    "lrc",
]
