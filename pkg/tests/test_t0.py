"""T=0 procedure-byte machine tests over the loopback channel."""

import pytest

from simtunnel.apdu import CommandApdu, ResponseApdu, parse_command
from simtunnel.clock import VirtualClock
from simtunnel.hexutil import h2b
from simtunnel.iso7816.channel import ChannelClosed, ChannelTimeout, loopback_pair
from simtunnel.iso7816.params import TimingConfig
from simtunnel.iso7816.t0 import t0_exchange_terminal, t0_serve_command


def run_t0(commands, handler, timing=TimingConfig(), latency=0.0):
    """Drive N commands terminal->card over loopback; returns responses."""
    clock = VirtualClock()
    term_end, card_end = loopback_pair(clock, latency=latency)

    def card_side():
        # serve until the terminal closes; 6C reissues arrive as extra
        # card-level commands beyond len(commands)
        try:
            while True:
                t0_serve_command(card_end, clock, timing, handler)
        except ChannelClosed:
            pass

    clock.spawn(card_side)
    responses = []
    with clock.attach_current_thread():
        for raw in commands:
            cmd = parse_command(h2b(raw)) if isinstance(raw, str) else raw
            responses.append(t0_exchange_terminal(cmd, term_end, clock, timing))
        term_end.close()
    return responses, clock


def test_case_1_and_2():
    def handler(cmd):
        if cmd.ins == 0xB0:
            return ResponseApdu(bytes(range(cmd.le)), 0x90, 0x00)
        return ResponseApdu(b"", 0x90, 0x00)

    (r1, r2), _ = run_t0(["a0f2000000", "a0b0000004"], handler)
    assert (r1.data, r1.sw) == (b"", 0x9000)
    assert (r2.data, r2.sw) == (bytes(range(4)), 0x9000)


def test_case_3_data_reaches_handler():
    seen = []

    def handler(cmd):
        seen.append(cmd)
        return ResponseApdu(b"", 0x90, 0x00)

    run_t0(["a0d6000004aabbccdd"], handler)
    assert seen[0].data == h2b("aabbccdd")
    assert seen[0].ins == 0xD6


def test_6c_retry_on_short_file():
    body = h2b("010203")

    def handler(cmd):
        return ResponseApdu(body[: cmd.le or 0], 0x90, 0x00)

    (resp,), _ = run_t0(["a0b0000010"], handler)  # le=16 > 3 available
    assert resp.data == body
    assert resp.sw == 0x9000


def test_null_heartbeat_covers_slow_handler():
    timing = TimingConfig(work_waiting=0.5, null_interval=0.1)

    def slow(cmd):
        clock_holder[0].sleep(2.0)
        return ResponseApdu(b"", 0x90, 0x00)

    clock_holder = [None]

    clock = VirtualClock()
    clock_holder[0] = clock
    term_end, card_end = loopback_pair(clock)
    clock.spawn(lambda: t0_serve_command(card_end, clock, timing, slow))
    with clock.attach_current_thread():
        resp = t0_exchange_terminal(
            parse_command(h2b("a0f2000000")), term_end, clock, timing
        )
        term_end.close()
    assert resp.sw == 0x9000
    assert clock.now() >= 2.0


def test_stalled_card_times_out_without_heartbeat():
    timing = TimingConfig(work_waiting=0.5)
    clock = VirtualClock()
    term_end, _card_end = loopback_pair(clock)  # nobody serves
    with clock.attach_current_thread():
        with pytest.raises(ChannelTimeout):
            t0_exchange_terminal(
                parse_command(h2b("a0f2000000")), term_end, clock, timing
            )
    assert clock.now() == pytest.approx(0.5)


def test_get_response_61_flow():
    pending = h2b("00112233445566778899aabbccddeeff")

    def handler(cmd):
        if cmd.ins == 0x88:
            return ResponseApdu(b"", 0x61, len(pending))
        if cmd.ins == 0xC0:
            return ResponseApdu(pending[: cmd.le or 0], 0x90, 0x00)
        return ResponseApdu(b"", 0x6D, 0x00)

    (r1, r2), _ = run_t0(
        ["a088000010" + "00" * 16, "a0c0000010"], handler
    )
    assert r1.sw == 0x6110
    assert r2.data == pending


def test_latency_on_wire_is_survivable():
    def handler(cmd):
        return ResponseApdu(b"", 0x90, 0x00)

    # 40 ms per hop; work_waiting must only cover per-byte gaps
    (resp,), clock = run_t0(["a0f2000000"], handler, latency=0.04)
    assert resp.sw == 0x9000
