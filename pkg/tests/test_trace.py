"""Trace capture, JSONL persistence, GSMTAP export, and replay tests."""

import io
import json
import socket
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from simtunnel.clock import VirtualClock
from simtunnel.hexutil import h2b
from simtunnel.trace import (
    GsmtapExporter,
    JsonlWriter,
    Recorder,
    ReplayReport,
    SessionHeader,
    TraceError,
    TraceRecord,
    gsmtap_packet,
    read_trace,
    replay_trace,
    write_trace,
)


def make_records(n=3):
    return [
        TraceRecord(
            seq=i,
            t_command_us=i * 1000,
            t_response_us=i * 1000 + 500,
            command=bytes([0xA0, 0xF2, 0, 0, i]),
            response=h2b("9000"),
        )
        for i in range(n)
    ]


HEADER = SessionHeader(session_id=bytes(range(16)), started_at=1700000000.25)


# -- recorder ---------------------------------------------------------------

def test_recorder_stamps_and_sequences():
    clock = VirtualClock(start=5.0)
    rec = Recorder(clock)
    t0 = rec.stamp()
    clock._now = 5.25  # direct nudge; no other threads attached
    t1 = rec.stamp()
    assert (t0, t1) == (0, 250000)
    a = rec.add(t0, t1, h2b("a0f2000000"), h2b("9000"))
    b = rec.add(t1, t1, h2b("a0f2000000"), h2b("9000"), tags=("x",))
    assert (a.seq, b.seq) == (0, 1)
    assert b.tags == ("x",)
    assert not a.rewritten_command and not a.rewritten_response
    c = rec.add(t1, t1, b"\x01", b"\x02", original_command=b"\x00")
    assert c.rewritten_command and c.original_command == b"\x00"


# -- jsonl ------------------------------------------------------------------

def test_jsonl_round_trip():
    records = make_records()
    buf = io.StringIO()
    write_trace(buf, HEADER, records)
    buf.seek(0)
    header, back = read_trace(buf)
    assert header == HEADER
    assert back == records


def test_jsonl_optional_fields_round_trip():
    rec = TraceRecord(
        seq=0, t_command_us=0, t_response_us=1,
        command=b"\x01", response=b"\x02",
        tags=("a", "b"),
        rewritten_command=True, original_command=b"\x03",
        rewritten_response=True, original_response=b"\x04",
    )
    buf = io.StringIO()
    write_trace(buf, HEADER, [rec])
    buf.seek(0)
    _, (back,) = read_trace(buf)
    assert back == rec


def test_jsonl_omits_absent_optionals():
    buf = io.StringIO()
    write_trace(buf, HEADER, make_records(1))
    record_line = json.loads(buf.getvalue().splitlines()[1])
    assert "tags" not in record_line
    assert "original_command" not in record_line
    assert record_line["command"] == record_line["command"].lower()


def break_line(buf, index, mutate):
    lines = buf.getvalue().splitlines()
    lines[index] = mutate(json.loads(lines[index]))
    return io.StringIO("\n".join(
        l if isinstance(l, str) else json.dumps(l) for l in lines
    ) + "\n")


@pytest.mark.parametrize(
    "index, mutate",
    [
        (1, lambda o: dict(o, seq=5)),                       # gap in seq
        (1, lambda o: dict(o, t_response_us=-1)),            # backwards time
        (1, lambda o: dict(o, type="mystery")),              # unknown type
        (0, lambda o: "not json {{"),                        # parse error
    ],
)
def test_jsonl_validation_errors(index, mutate):
    buf = io.StringIO()
    write_trace(buf, HEADER, make_records(2))
    with pytest.raises(TraceError):
        read_trace(break_line(buf, index, mutate))


def test_jsonl_requires_single_header():
    buf = io.StringIO()
    write_trace(buf, HEADER, [])
    doubled = io.StringIO(buf.getvalue() + buf.getvalue())
    with pytest.raises(TraceError):
        read_trace(doubled)
    with pytest.raises(TraceError):
        read_trace(io.StringIO(""))


def test_jsonl_writer_rejects_record_before_header():
    w = JsonlWriter(io.StringIO())
    with pytest.raises(TraceError):
        w.append(make_records(1)[0])


# -- gsmtap -----------------------------------------------------------------

def test_gsmtap_packet_golden():
    pkt = gsmtap_packet(h2b("a0f2000000"), sub_type=0)
    assert len(pkt) == 16 + 5
    # version 2, length 4 words, payload type SIM
    assert pkt[:4] == bytes([2, 4, 0x04, 0])
    assert pkt[4:16] == bytes(12)
    assert pkt[16:] == h2b("a0f2000000")
    assert struct.unpack("!BBBBHbBIBBBB", pkt[:16])[2] == 0x04


def test_gsmtap_exporter_sends_two_datagrams():
    sink = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sink.bind(("127.0.0.1", 0))
    sink.settimeout(2.0)
    _, port = sink.getsockname()
    exporter = GsmtapExporter("127.0.0.1", port)
    exporter.append(make_records(1)[0])
    got = [sink.recvfrom(2048)[0] for _ in range(2)]
    exporter.close()
    sink.close()
    assert got[0] == gsmtap_packet(h2b("a0f2000000"))
    assert got[1] == gsmtap_packet(h2b("9000"))
    assert exporter.dropped == 0


# -- replay -----------------------------------------------------------------

def test_replay_all_match():
    records = make_records(5)
    report = replay_trace(records, lambda cmd: h2b("9000"))
    assert report.ok and report.total == 5 and report.matched == 5


def test_replay_collects_mismatches():
    records = make_records(3)

    def exchange(cmd):
        return h2b("6d00") if cmd[-1] == 1 else h2b("9000")

    report = replay_trace(records, exchange)
    assert not report.ok
    assert report.matched == 2
    (mm,) = report.mismatches
    assert mm.seq == 1 and mm.expected == h2b("9000") and mm.actual == h2b("6d00")


def test_replay_paced_reproduces_gaps():
    records = [
        TraceRecord(seq=i, t_command_us=t, t_response_us=t + 1,
                    command=b"\x00" * 4, response=h2b("9000"))
        for i, t in enumerate([100_000, 600_000, 2_600_000])
    ]
    clock = VirtualClock()
    issue_times = []

    def exchange(cmd):
        issue_times.append(clock.now())
        return h2b("9000")

    with clock.attach_current_thread():
        report = replay_trace(records, exchange, paced=True, clock=clock)
    assert report.ok
    # gaps relative to the first command: 0, 0.5 s, 2.5 s
    rel = [t - issue_times[0] for t in issue_times]
    assert rel == pytest.approx([0.0, 0.5, 2.5])
