"""Protocol parameters and the ISO 7816-3 Fi/Di conversion tables."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Protocol(enum.Enum):
    T0 = 0
    T1 = 1


class ReservedFiDi(ValueError):
    """TA1 references an RFU entry of the conversion tables."""


# Clock-rate conversion table, indexed by the FI code (TA1 high nibble).
_FI_TABLE = {
    0: 372, 1: 372, 2: 558, 3: 744, 4: 1116, 5: 1488, 6: 1860,
    9: 512, 10: 768, 11: 1024, 12: 1536, 13: 2048,
}

# Baud-rate adjustment table, indexed by the DI code (TA1 low nibble).
_DI_TABLE = {
    1: 1, 2: 2, 3: 4, 4: 8, 5: 16, 6: 32, 7: 64, 8: 12, 9: 20,
}

DEFAULT_FI = 372
DEFAULT_DI = 1

# public read-only views of the conversion tables
FI_TABLE = dict(_FI_TABLE)
DI_TABLE = dict(_DI_TABLE)


def lookup_fidi(ta1: int | None) -> tuple[int, int]:
    """Resolve a TA1 byte to (Fi, Di); absent TA1 yields the defaults."""
    if ta1 is None:
        return DEFAULT_FI, DEFAULT_DI
    fi_code, di_code = ta1 >> 4, ta1 & 0x0F
    if fi_code not in _FI_TABLE:
        raise ReservedFiDi("FI code %d is reserved" % fi_code)
    if di_code not in _DI_TABLE:
        raise ReservedFiDi("DI code %d is reserved" % di_code)
    return _FI_TABLE[fi_code], _DI_TABLE[di_code]


def encode_fidi(fi: int, di: int) -> int:
    """Inverse of lookup_fidi; raises ReservedFiDi for unencodable pairs."""
    try:
        # FI codes 0 and 1 both map to 372; prefer 1 (explicit default).
        fi_code = next(c for c in (1, 0, 2, 3, 4, 5, 6, 9, 10, 11, 12, 13)
                       if _FI_TABLE[c] == fi)
        di_code = next(c for c, v in _DI_TABLE.items() if v == di)
    except StopIteration:
        raise ReservedFiDi("(Fi=%d, Di=%d) has no TA1 encoding" % (fi, di)) from None
    return (fi_code << 4) | di_code


@dataclass(frozen=True)
class ProtocolParams:
    """The parameter set each endpoint settles locally (ATR/PPS level)."""

    fi: int = DEFAULT_FI
    di: int = DEFAULT_DI
    active_protocol: Protocol = Protocol.T0
    wi: int = 10          # T=0 waiting-time integer
    bwi: int = 4          # T=1 block-waiting integer
    cwi: int = 13         # T=1 character-waiting integer
    ifsc: int = 32        # T=1 max information field size

    def __post_init__(self):
        encode_fidi(self.fi, self.di)  # rejects values outside the tables
        if not 1 <= self.ifsc <= 254:
            raise ValueError("ifsc must be within [1, 254]")

    @property
    def ta1(self) -> int:
        return encode_fidi(self.fi, self.di)


@dataclass(frozen=True)
class TimingConfig:
    """Wall/virtual-clock durations the software channel actually enforces.

    The integer waiting-time parameters above describe the negotiated card
    interface; in a software tunnel the effective deadlines are configured
    directly in seconds.
    """

    work_waiting: float = 1.0    # T=0 per-byte deadline, reset by NULL
    block_waiting: float = 1.0   # T=1 BWT, extended by WTX
    char_waiting: float = 0.5    # T=1 deadline for bytes within a block
    null_interval: float = 0.2   # card-side NULL / S(WTX) cadence
    retries: int = 3             # T=1 per-block retransmissions before resynch
