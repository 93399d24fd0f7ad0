"""Shared fixtures: a reference card profile and the golden session script
used by the end-to-end suites."""

from __future__ import annotations

import pytest

from simtunnel.hexutil import h2b
from simtunnel.vsim import load_profile

REFERENCE_IMSI = "001010123456789"
REFERENCE_ICCID = "8988211000000689310"
XOR_KEY_HEX = "00112233445566778899aabbccddeeff"

REFERENCE_PROFILE_DOC = {
    "imsi": REFERENCE_IMSI,
    "iccid": REFERENCE_ICCID,
    "auth": {"mode": "xor", "key": XOR_KEY_HEX},
    "files": [
        {"id": "3f00", "kind": "mf"},
        {"id": "7f20", "kind": "df"},
        {
            "id": "6f3a",
            "kind": "linear",
            "parent": "7f20",
            "record_len": 8,
            "records": ["0102030405060708", "1112131415161718"],
        },
    ],
}

# 20 commands: Select MF, Select/Read EF_ICCID, Select/Read EF_IMSI,
# Authenticate x2 (each with its Get Response), Status xN.  All commands
# use explicit-length forms so T=0 and T=1 sessions are byte-identical.
GOLDEN_SESSION = [
    "a0a40000023f00",
    "a0a40000022fe2",
    "a0b000000a",
    "a0a40000027f20",
    "a0a40000026f07",
    "a0b0000009",
    "a088000010" + "00" * 16,
    "a0c0000010",
    "a088000010" + "11" * 16,
    "a0c0000010",
] + ["a0f2000000"] * 10

assert len(GOLDEN_SESSION) == 20


@pytest.fixture
def profile_doc():
    import copy

    return copy.deepcopy(REFERENCE_PROFILE_DOC)


@pytest.fixture
def profile(profile_doc):
    return load_profile(profile_doc)


@pytest.fixture
def golden_session():
    return [h2b(c) for c in GOLDEN_SESSION]
