"""T=1 block protocol tests.  LRC uses a reduce-based XOR oracle; the
chaining tests compare emitted I-block payloads against a brute-force
splitter independent of the endpoint implementation."""

from functools import reduce

import pytest
from hypothesis import given
from hypothesis import strategies as st

from simtunnel.apdu import ResponseApdu, serialize_command
from simtunnel.clock import VirtualClock
from simtunnel.hexutil import h2b
from simtunnel.iso7816.channel import loopback_pair
from simtunnel.iso7816.params import TimingConfig
from simtunnel.iso7816.t1 import (
    BadLength,
    BadLrc,
    BadPcb,
    IBlock,
    RBlock,
    RErr,
    SBlock,
    SOp,
    T1Block,
    T1Card,
    T1Terminal,
    decode_block,
    decode_pcb,
    encode_pcb,
    lrc,
    make_block,
)


def xor_fold(data: bytes) -> int:
    return reduce(lambda a, b: a ^ b, data, 0)


@given(st.binary(max_size=300))
def test_lrc_matches_xor_fold_oracle(data):
    assert lrc(data) == xor_fold(data)
    assert lrc(data + bytes([lrc(data)])) == 0


def test_pcb_bijection_over_all_octets():
    defined = 0
    for pcb in range(256):
        try:
            kind = decode_pcb(pcb)
        except BadPcb:
            continue
        defined += 1
        assert encode_pcb(kind) == pcb
    # 8 I-blocks? no: I = seq x more = 4; R = seq x 3 errs = 6; S = op x dir = 8
    assert defined == 4 + 6 + 8


@given(
    st.one_of(
        st.builds(IBlock, seq=st.integers(0, 1), more=st.booleans()),
        st.builds(RBlock, seq=st.integers(0, 1), err=st.sampled_from(list(RErr))),
        st.builds(SBlock, op=st.sampled_from(list(SOp)), is_response=st.booleans()),
    ),
    st.binary(max_size=254),
)
def test_block_round_trip(kind, inf):
    blk = make_block(kind, inf)
    assert decode_block(blk.encode()) == blk
    assert blk.kind == kind


def test_golden_wtx_request_pcb():
    assert encode_pcb(SBlock(SOp.WTX, False)) == 0xC3
    raw = h2b("00c30101")
    assert lrc(raw) == 0xC3


def test_decode_block_errors():
    good = make_block(IBlock(0, False), b"\x01").encode()
    with pytest.raises(BadLrc):
        decode_block(good[:-1] + bytes([good[-1] ^ 0xFF]))
    with pytest.raises(BadLength):
        decode_block(good + b"\x00")
    with pytest.raises(BadLength):
        decode_block(b"\x00\x00\xff" + b"\x00" * 256)
    with pytest.raises(BadPcb):
        blk = T1Block(0x00, 0x01, b"")  # I-block with reserved bit
        decode_block(blk.encode())


def oracle_chunks(payload: bytes, ifsc: int) -> list:
    """Brute-force splitter: greedy ifsc-sized pieces, one empty for b''."""
    if not payload:
        return [b""]
    out = []
    while payload:
        out.append(payload[:ifsc])
        payload = payload[ifsc:]
    return out


def run_exchange(payload: bytes, ifsc: int, corrupt_hook=None, handler=None):
    """Full terminal<->card exchange over loopback; returns
    (response bytes, terminal-side block log)."""
    clock = VirtualClock()
    term_end, card_end = loopback_pair(clock, corrupt_hook=corrupt_hook)
    log: list = []
    handler = handler or (lambda cmd: ResponseApdu(serialize_command(cmd), 0x90, 0x00))

    def card_side():
        card = T1Card(card_end, clock, ifsc=ifsc)
        card.serve_command(handler)

    clock.spawn(card_side)
    with clock.attach_current_thread():
        terminal = T1Terminal(term_end, clock, ifsc=ifsc, block_log=log)
        resp = terminal.exchange(payload)
        term_end.close()
    return resp, log


def sent_i_payloads(log):
    out = []
    for direction, raw in log:
        if direction != "tx":
            continue
        blk = decode_block(raw)
        if isinstance(blk.kind, IBlock):
            out.append(blk.inf)
    return out


@pytest.mark.parametrize("ifsc", [1, 31, 32, 254])
def test_chaining_matches_oracle_splitter(ifsc):
    cmd = b"\xa0\xd6\x00\x00\xff" + bytes(range(255))
    resp, log = run_exchange(cmd, ifsc)
    assert resp == cmd + b"\x90\x00"
    assert sent_i_payloads(log) == oracle_chunks(cmd, ifsc)


def test_sequence_numbers_alternate():
    clock = VirtualClock()
    term_end, card_end = loopback_pair(clock)
    log: list = []

    def card_side():
        card = T1Card(card_end, clock)
        for _ in range(3):
            card.serve_command(lambda cmd: ResponseApdu(b"", 0x90, 0x00))

    clock.spawn(card_side)
    with clock.attach_current_thread():
        terminal = T1Terminal(term_end, clock, block_log=log)
        for _ in range(3):
            assert terminal.exchange(h2b("a0f2000000")) == h2b("9000")
        term_end.close()
    seqs = [decode_block(raw).kind.seq for d, raw in log
            if d == "tx" and isinstance(decode_block(raw).kind, IBlock)]
    assert seqs == [0, 1, 0]


def test_single_corruption_recovers():
    cmd = h2b("a0b0000010")
    clean, _ = run_exchange(cmd, 32)

    def corrupt_first_send(i, data):
        if i == 0:
            return bytes([data[0] ^ 0x55]) + data[1:]
        return data

    resp, log = run_exchange(cmd, 32, corrupt_hook=corrupt_first_send)
    assert resp == clean
    # the card asked for a retransmission at least once
    rblocks = [decode_block(raw) for d, raw in log if d == "rx"]
    assert any(isinstance(b.kind, RBlock) and b.kind.err is RErr.CRC_LRC for b in rblocks)


def test_wtx_heartbeat_covers_slow_handler():
    clock = VirtualClock()
    term_end, card_end = loopback_pair(clock)
    log: list = []
    timing = TimingConfig(block_waiting=0.5, null_interval=0.2)

    def slow_handler(cmd):
        clock.sleep(2.0)  # far beyond BWT
        return ResponseApdu(b"", 0x90, 0x00)

    def card_side():
        T1Card(card_end, clock, timing).serve_command(slow_handler)

    clock.spawn(card_side)
    with clock.attach_current_thread():
        terminal = T1Terminal(term_end, clock, timing, block_log=log)
        assert terminal.exchange(h2b("a0f2000000")) == h2b("9000")
        term_end.close()
    assert clock.now() >= 2.0
    wtx = [raw for d, raw in log if d == "rx"
           and isinstance(decode_block(raw).kind, SBlock)
           and decode_block(raw).kind.op is SOp.WTX]
    assert len(wtx) >= 9  # one request per 0.2 s for 2 s
