"""Virtual card: one session's live state over an immutable profile.

Errors surface as status words, never exceptions; an unknown instruction
gets 6D00.  While the proactive queue holds an unfetched command, any
successful status is replaced by 91 XX with XX the head command's length.
"""

from __future__ import annotations

import copy
from typing import Optional

from ..apdu import (
    ApduError,
    CommandApdu,
    ResponseApdu,
    SimCommandKind,
    classify_sim,
    parse_command,
    serialize_response,
)
from ..backend import MalformedApdu, SimBackend
from ..iso7816.atr import build_atr
from ..iso7816.params import ProtocolParams
from .profile import DedicatedFile, LinearFixedEf, SimProfile, TransparentEf

SW_OK = 0x9000
SW_FILE_NOT_FOUND = 0x6A82
SW_SECURITY = 0x6982
SW_WRONG_LENGTH = 0x6700
SW_UNKNOWN_INS = 0x6D00
SW_AUTH_ERROR = 0x9862
SW_NOT_ALLOWED = 0x6986
SW_CONDITIONS = 0x6985


def _ok(data: bytes = b"") -> ResponseApdu:
    return ResponseApdu.from_sw(SW_OK, data)


class VirtualCard(SimBackend):
    """One card session.  The given profile is copied, so concurrent
    sessions over the same profile never observe each other's updates."""

    def __init__(
        self,
        profile: SimProfile,
        params: ProtocolParams = ProtocolParams(),
    ) -> None:
        self.profile = copy.deepcopy(profile)
        self.params = params
        self._queue: list[bytes] = list(self.profile.proactive)
        self.selected: list = [self.profile.mf]  # path from MF
        self.pending_response: Optional[bytes] = None
        self._head_fetched = False

    # -- SimBackend -------------------------------------------------------

    def atr(self) -> bytes:
        return build_atr(self.params, self.profile.atr_historical)

    def exchange(self, command: bytes) -> bytes:
        try:
            cmd = parse_command(command)
        except ApduError as exc:
            raise MalformedApdu(str(exc)) from exc
        return serialize_response(self.handle(cmd))

    def reset(self) -> None:
        """Back to MF, pending state cleared; file contents are preserved."""
        self.selected = [self.profile.mf]
        self.pending_response = None
        self._queue = list(self.profile.proactive)
        self._head_fetched = False

    # -- command dispatch -------------------------------------------------

    def handle(self, cmd: CommandApdu) -> ResponseApdu:
        kind = classify_sim(cmd)
        method = getattr(self, "_cmd_" + kind.name.lower(), None)
        if method is None:
            resp = ResponseApdu.from_sw(SW_UNKNOWN_INS)
        else:
            resp = method(cmd)
        if (
            self._queue
            and not self._head_fetched
            and kind is not SimCommandKind.FETCH
            and resp.sw == SW_OK
        ):
            resp = ResponseApdu(resp.data, 0x91, len(self._queue[0]))
        return resp

    def queue_proactive(self, command_tlv: bytes) -> None:
        self._queue.append(command_tlv)

    @property
    def current_file(self):
        return self.selected[-1]

    @property
    def current_df(self) -> DedicatedFile:
        for f in reversed(self.selected):
            if isinstance(f, DedicatedFile):
                return f
        return self.profile.mf

    # -- individual commands ----------------------------------------------

    def _cmd_select(self, cmd: CommandApdu) -> ResponseApdu:
        if len(cmd.data) != 2:
            return ResponseApdu.from_sw(SW_WRONG_LENGTH)
        fid = int.from_bytes(cmd.data, "big")
        target = self._locate(fid)
        if target is None:
            return ResponseApdu.from_sw(SW_FILE_NOT_FOUND)
        self._select_path(target)
        if cmd.cla == 0x00:
            self.pending_response = self._fcp(target)
            return ResponseApdu(b"", 0x61, len(self.pending_response))
        return _ok()

    def _locate(self, fid: int):
        if fid == self.profile.mf.id:
            return self.profile.mf
        df = self.current_df
        candidates = [df] + list(df.children.values())
        parent = self.profile.find_parent(df.id)
        if parent is not None:
            candidates += [parent] + list(parent.children.values())
        for f in candidates:
            if f.id == fid:
                return f
        return None

    def _select_path(self, target) -> None:
        path = self._path_to(target, self.profile.mf)
        self.selected = path if path else [self.profile.mf]

    def _path_to(self, target, node):
        if node is target:
            return [node]
        if isinstance(node, DedicatedFile):
            for child in node.children.values():
                sub = self._path_to(target, child)
                if sub:
                    return [node] + sub
        return None

    def _fcp(self, f) -> bytes:
        # minimal fixed template: file descriptor, file id, size for EFs
        if isinstance(f, DedicatedFile):
            descriptor = 0x38
            size = None
        elif isinstance(f, TransparentEf):
            descriptor = 0x41
            size = len(f.body)
        else:
            descriptor = 0x42
            size = f.record_len * len(f.records)
        inner = bytes([0x82, 0x02, descriptor, 0x21])
        inner += bytes([0x83, 0x02]) + f.id.to_bytes(2, "big")
        if size is not None:
            inner += bytes([0x80, 0x02]) + size.to_bytes(2, "big")
        return bytes([0x62, len(inner)]) + inner

    def _cmd_read_binary(self, cmd: CommandApdu) -> ResponseApdu:
        f = self.current_file
        if not isinstance(f, TransparentEf):
            return ResponseApdu.from_sw(SW_NOT_ALLOWED)
        offset = cmd.p1p2
        if offset > len(f.body):
            return ResponseApdu.from_sw(SW_WRONG_LENGTH)
        le = cmd.le or 0
        return _ok(bytes(f.body[offset : offset + le]))

    def _cmd_update_binary(self, cmd: CommandApdu) -> ResponseApdu:
        f = self.current_file
        if not isinstance(f, TransparentEf):
            return ResponseApdu.from_sw(SW_NOT_ALLOWED)
        if f.read_only:
            return ResponseApdu.from_sw(SW_SECURITY)
        offset = cmd.p1p2
        if offset + len(cmd.data) > len(f.body):
            return ResponseApdu.from_sw(SW_WRONG_LENGTH)
        f.body[offset : offset + len(cmd.data)] = cmd.data
        return _ok()

    def _cmd_read_record(self, cmd: CommandApdu) -> ResponseApdu:
        f = self.current_file
        if not isinstance(f, LinearFixedEf):
            return ResponseApdu.from_sw(SW_NOT_ALLOWED)
        if cmd.p2 != 0x04:  # absolute mode only
            return ResponseApdu.from_sw(0x6A86)
        if not 1 <= cmd.p1 <= len(f.records):
            return ResponseApdu.from_sw(0x6A83)
        record = bytes(f.records[cmd.p1 - 1])
        if cmd.le and cmd.le < len(record):
            record = record[: cmd.le]
        return _ok(record)

    def _cmd_update_record(self, cmd: CommandApdu) -> ResponseApdu:
        f = self.current_file
        if not isinstance(f, LinearFixedEf):
            return ResponseApdu.from_sw(SW_NOT_ALLOWED)
        if f.read_only:
            return ResponseApdu.from_sw(SW_SECURITY)
        if cmd.p2 != 0x04:
            return ResponseApdu.from_sw(0x6A86)
        if not 1 <= cmd.p1 <= len(f.records):
            return ResponseApdu.from_sw(0x6A83)
        if len(cmd.data) != f.record_len:
            return ResponseApdu.from_sw(SW_WRONG_LENGTH)
        f.records[cmd.p1 - 1] = bytearray(cmd.data)
        return _ok()

    def _cmd_status(self, cmd: CommandApdu) -> ResponseApdu:
        return _ok()

    def _cmd_get_response(self, cmd: CommandApdu) -> ResponseApdu:
        if self.pending_response is None:
            return ResponseApdu.from_sw(SW_CONDITIONS)
        data = self.pending_response
        self.pending_response = None
        if cmd.le and cmd.le < len(data):
            data = data[: cmd.le]
        return _ok(data)

    def _cmd_authenticate(self, cmd: CommandApdu) -> ResponseApdu:
        result = self.authenticate(cmd.data)
        if result is None:
            return ResponseApdu.from_sw(SW_AUTH_ERROR)
        self.pending_response = result
        return ResponseApdu(b"", 0x61, len(result))

    def authenticate(self, challenge: bytes) -> Optional[bytes]:
        """XOR mode: response is challenge XOR key.  Vector mode: lookup,
        None on a miss (docs/vsim.md)."""
        cfg = self.profile.auth
        if cfg.mode == "xor":
            if len(challenge) != len(cfg.key):
                return None
            return bytes(c ^ k for c, k in zip(challenge, cfg.key))
        return cfg.vectors.get(bytes(challenge))

    def _cmd_fetch(self, cmd: CommandApdu) -> ResponseApdu:
        if not self._queue:
            return ResponseApdu.from_sw(SW_CONDITIONS)
        self._head_fetched = True
        head = self._queue[0]
        if cmd.le and cmd.le < len(head):
            head = head[: cmd.le]
        return _ok(head)

    def _cmd_terminal_response(self, cmd: CommandApdu) -> ResponseApdu:
        if self._queue:
            self._queue.pop(0)
        self._head_fetched = False
        return _ok()

    def _cmd_envelope(self, cmd: CommandApdu) -> ResponseApdu:
        return _ok()  # payloads are opaque; OTA decoding is out of scope

    def _cmd_verify_pin(self, cmd: CommandApdu) -> ResponseApdu:
        return _ok()  # single always-disabled CHV

    def _cmd_unknown(self, cmd: CommandApdu) -> ResponseApdu:
        return ResponseApdu.from_sw(SW_UNKNOWN_INS)
