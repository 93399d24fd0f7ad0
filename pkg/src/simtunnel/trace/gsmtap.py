"""GSMTAP export: UDP datagrams carrying raw APDU bytes, consumable by
Wireshark and friends.  Header is version 2, 16 bytes (hdr_len counts
32-bit words), payload type SIM.  Export failures never disturb the
relay path; they only bump a drop counter.
"""

from __future__ import annotations

import socket
import struct

from .records import TraceRecord

GSMTAP_VERSION = 2
GSMTAP_HDR_WORDS = 4  # 16 bytes
GSMTAP_TYPE_SIM = 0x04
DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 4729


def gsmtap_packet(payload: bytes, sub_type: int = 0) -> bytes:
    header = struct.pack(
        "!BBBBHbBIBBBB",
        GSMTAP_VERSION,
        GSMTAP_HDR_WORDS,
        GSMTAP_TYPE_SIM,
        0,  # timeslot
        0,  # arfcn
        0,  # signal dBm
        0,  # SNR dB
        0,  # frame number
        sub_type,
        0,  # antenna
        0,  # sub-slot
        0,  # reserved
    )
    return header + payload


class GsmtapExporter:
    """Recorder sink sending one datagram per direction of each record."""

    def __init__(self, host: str = DEFAULT_HOST, port: int = DEFAULT_PORT):
        self.addr = (host, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.dropped = 0

    def append(self, record: TraceRecord) -> None:
        for payload in (record.command, record.response):
            try:
                self.sock.sendto(gsmtap_packet(payload), self.addr)
            except OSError:
                self.dropped += 1

    def close(self) -> None:
        self.sock.close()
