"""Virtual SIM/USIM: hierarchical file system, SIM command set handlers,
pluggable authentication, and a proactive-command queue."""

from .profile import (
    AuthConfig,
    DedicatedFile,
    LinearFixedEf,
    ProfileError,
    SimProfile,
    TransparentEf,
    encode_iccid,
    encode_imsi,
    decode_bcd_digits,
    decode_imsi,
    load_profile,
    load_profile_file,
    luhn_check_digit,
)
from .card import VirtualCard

__all__ = [
    "AuthConfig",
    "DedicatedFile",
    "LinearFixedEf",
    "ProfileError",
    "SimProfile",
    "TransparentEf",
    "encode_iccid",
    "encode_imsi",
    "decode_bcd_digits",
    "decode_imsi",
    "load_profile",
    "load_profile_file",
    "luhn_check_digit",
    "VirtualCard",
]
