"""Profile documents: the declarative description of a virtual card.

A profile is a JSON file with `imsi`, `iccid`, `auth`, `files`, and
`proactive` fields (schema in docs/profile.md).  The IMSI and ICCID helper
fields expand into correctly encoded EF bodies: IMSI per the BCD
mobile-identity layout (length octet, parity nibble, swapped digit pairs),
ICCID as swapped-nibble BCD padded with F.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

from ..hexutil import h2b

MF_ID = 0x3F00
DF_GSM_ID = 0x7F20
EF_IMSI_ID = 0x6F07
EF_ICCID_ID = 0x2FE2


class ProfileError(ValueError):
    pass


class SchemaError(ProfileError):
    pass


class DuplicateFileId(ProfileError):
    pass


class RecordLengthMismatch(ProfileError):
    pass


class BadImsiDigits(ProfileError):
    pass


class BadIccidDigits(ProfileError):
    pass


@dataclass
class TransparentEf:
    id: int
    body: bytearray
    read_only: bool = False

    def __post_init__(self):
        if len(self.body) > 32 * 1024:
            raise SchemaError("transparent EF body exceeds 32 KiB")


@dataclass
class LinearFixedEf:
    id: int
    record_len: int
    records: list  # of bytearray, each exactly record_len bytes
    read_only: bool = False

    def __post_init__(self):
        if self.record_len < 1:
            raise SchemaError("record_len must be >= 1")
        for r in self.records:
            if len(r) != self.record_len:
                raise RecordLengthMismatch(
                    "record of %d bytes in EF with record_len=%d"
                    % (len(r), self.record_len)
                )


@dataclass
class DedicatedFile:
    id: int
    children: dict = field(default_factory=dict)  # id -> SimFile

    def add(self, f: "SimFile") -> None:
        if f.id in self.children:
            raise DuplicateFileId("file %04X declared twice" % f.id)
        self.children[f.id] = f


SimFile = Union[TransparentEf, LinearFixedEf, DedicatedFile]


@dataclass
class AuthConfig:
    mode: str  # "xor" or "vectors"
    key: bytes = b""
    vectors: dict = field(default_factory=dict)  # challenge bytes -> response bytes

    def __post_init__(self):
        if self.mode not in ("xor", "vectors"):
            raise SchemaError("auth mode must be 'xor' or 'vectors'")
        if self.mode == "xor" and len(self.key) != 16:
            raise SchemaError("xor auth needs a 16-byte key")


@dataclass
class SimProfile:
    mf: DedicatedFile
    auth: AuthConfig = field(default_factory=lambda: AuthConfig("xor", bytes(16)))
    proactive: list = field(default_factory=list)  # complete command TLVs, opaque
    atr_historical: bytes = b""

    def find_parent(self, fid: int, root: Optional[DedicatedFile] = None) -> Optional[DedicatedFile]:
        root = root or self.mf
        for child in root.children.values():
            if child.id == fid:
                return root
            if isinstance(child, DedicatedFile):
                found = self.find_parent(fid, child)
                if found:
                    return found
        return None


def encode_imsi(digits: str) -> bytes:
    """EF_IMSI body: length octet, then parity nibble + swapped BCD pairs."""
    if not digits.isdigit() or not 6 <= len(digits) <= 15:
        raise BadImsiDigits("IMSI must be 6-15 digits")
    odd = len(digits) % 2 == 1
    nibbles = [int(d) for d in digits]
    first = (nibbles[0] << 4) | (0b1001 if odd else 0b0001)
    out = [first]
    rest = nibbles[1:]
    for i in range(0, len(rest), 2):
        lo = rest[i]
        hi = rest[i + 1] if i + 1 < len(rest) else 0xF
        out.append((hi << 4) | lo)
    return bytes([len(out)]) + bytes(out)


def decode_imsi(body: bytes) -> str:
    """Inverse of encode_imsi."""
    if not body or body[0] != len(body) - 1:
        raise BadImsiDigits("bad IMSI length octet")
    bcd = body[1:]
    odd = (bcd[0] & 0x0F) >> 3 == 1
    digits = [str(bcd[0] >> 4)]
    for b in bcd[1:]:
        digits.append(str(b & 0x0F))
        digits.append(str(b >> 4))
    if not odd:
        digits.pop()  # trailing filler nibble
    return "".join(digits)


def luhn_check_digit(digits: str) -> int:
    total = 0
    for i, d in enumerate(reversed(digits)):
        v = int(d)
        if i % 2 == 0:  # positions that double once the check digit is appended
            v *= 2
            if v > 9:
                v -= 9
        total += v
    return (10 - total % 10) % 10


def encode_iccid(digits: str) -> bytes:
    """EF_ICCID body: swapped-nibble BCD, 10 octets, padded with F.

    19-digit values get their Luhn check digit appended; 20-digit values
    are taken verbatim.
    """
    if not digits.isdigit() or not 18 <= len(digits) <= 20:
        raise BadIccidDigits("ICCID must be 18-20 digits")
    if len(digits) == 19:
        digits += str(luhn_check_digit(digits))
    nibbles = [int(d) for d in digits] + [0xF] * (20 - len(digits))
    out = bytearray()
    for i in range(0, 20, 2):
        out.append((nibbles[i + 1] << 4) | nibbles[i])
    return bytes(out)


def decode_bcd_digits(body: bytes) -> str:
    """Swapped-nibble BCD to digit string, F-padding stripped."""
    digits = []
    for b in body:
        for nib in (b & 0x0F, b >> 4):
            if nib == 0xF:
                return "".join(digits)
            digits.append(str(nib))
    return "".join(digits)


_FILE_KEYS = {"id", "kind", "parent", "body", "records", "record_len", "read_only"}
_TOP_KEYS = {"imsi", "iccid", "auth", "files", "proactive", "atr_historical"}


def _file_id(value) -> int:
    try:
        fid = int(str(value), 16)
    except ValueError:
        raise SchemaError("bad file id %r" % (value,)) from None
    if not 0 <= fid <= 0xFFFF:
        raise SchemaError("file id %r out of range" % (value,))
    return fid


def load_profile(doc: dict) -> SimProfile:
    if not isinstance(doc, dict):
        raise SchemaError("profile document must be an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise SchemaError("unknown profile keys: %s" % ", ".join(sorted(unknown)))

    entries = doc.get("files", [])
    declared: dict[int, tuple] = {}  # id -> (file, parent id)
    for entry in entries:
        extra = set(entry) - _FILE_KEYS
        if extra:
            raise SchemaError("unknown file keys: %s" % ", ".join(sorted(extra)))
        fid = _file_id(entry.get("id"))
        kind = entry.get("kind")
        read_only = bool(entry.get("read_only", False))
        if kind in ("mf", "df"):
            f: SimFile = DedicatedFile(fid)
        elif kind == "transparent":
            f = TransparentEf(fid, bytearray(h2b(entry.get("body", ""))), read_only)
        elif kind == "linear":
            records = [bytearray(h2b(r)) for r in entry.get("records", [])]
            f = LinearFixedEf(fid, int(entry.get("record_len", 0)), records, read_only)
        else:
            raise SchemaError("unknown file kind %r" % (kind,))
        if fid in declared:
            raise DuplicateFileId("file %04X declared twice" % fid)
        parent = entry.get("parent")
        declared[fid] = (f, _file_id(parent) if parent is not None else None)

    if MF_ID not in declared:
        raise SchemaError("profile must declare the MF (3f00)")
    mf = declared[MF_ID][0]
    if not isinstance(mf, DedicatedFile):
        raise SchemaError("3f00 must be the MF/DF kind")
    for fid, (f, parent_id) in declared.items():
        if fid == MF_ID:
            continue
        parent_id = MF_ID if parent_id is None else parent_id
        parent = declared.get(parent_id, (None, None))[0]
        if not isinstance(parent, DedicatedFile):
            raise SchemaError("parent %04X of %04X is not a DF" % (parent_id, fid))
        parent.add(f)

    profile = SimProfile(mf=mf)

    if "imsi" in doc:
        body = encode_imsi(doc["imsi"])
        df_gsm = declared.get(DF_GSM_ID, (None, None))[0]
        if df_gsm is None:
            df_gsm = DedicatedFile(DF_GSM_ID)
            mf.add(df_gsm)
        df_gsm.add(TransparentEf(EF_IMSI_ID, bytearray(body)))
    if "iccid" in doc:
        mf.add(TransparentEf(EF_ICCID_ID, bytearray(encode_iccid(doc["iccid"])), read_only=True))

    auth = doc.get("auth")
    if auth is not None:
        mode = auth.get("mode")
        if mode == "xor":
            profile.auth = AuthConfig("xor", key=h2b(auth.get("key", "")))
        elif mode == "vectors":
            vectors = {}
            for v in auth.get("vectors", []):
                challenge = h2b(v["challenge"])
                if challenge in vectors:
                    raise SchemaError("duplicate auth challenge")
                vectors[challenge] = h2b(v["response"])
            profile.auth = AuthConfig("vectors", vectors=vectors)
        else:
            raise SchemaError("unknown auth mode %r" % (mode,))

    profile.proactive = [h2b(p) for p in doc.get("proactive", [])]
    for p in profile.proactive:
        if not 1 <= len(p) <= 255:
            raise SchemaError("proactive command must be 1-255 bytes")
    profile.atr_historical = h2b(doc.get("atr_historical", ""))
    return profile


def load_profile_file(path: str) -> SimProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return load_profile(json.load(fh))
