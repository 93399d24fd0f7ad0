"""Relay wire-format tests: framing round-trips and error handling."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from simtunnel.clock import VirtualClock
from simtunnel.hexutil import h2b
from simtunnel.iso7816.channel import loopback_pair
from simtunnel.relay.frames import (
    MAX_PAYLOAD,
    ROLE_PROBE,
    ROLE_PROVIDER,
    WIRE_VERSION,
    MsgType,
    OversizedFrame,
    RelayMessage,
    TruncatedStream,
    UnknownType,
    decode_message,
    decode_message_bytes,
    encode_message,
    hello_payload,
    parse_hello,
)


msg_strategy = st.builds(
    RelayMessage,
    msg_type=st.sampled_from(list(MsgType)),
    payload=st.binary(max_size=512),
)


@given(msg_strategy)
def test_encode_decode_bytes_round_trip(msg):
    wire = encode_message(msg)
    decoded, consumed = decode_message_bytes(wire)
    assert decoded == msg
    assert consumed == len(wire) == 5 + len(msg.payload)


@given(msg_strategy, st.binary(max_size=16))
def test_decode_bytes_reports_exact_consumption(msg, trailing):
    wire = encode_message(msg) + trailing
    decoded, consumed = decode_message_bytes(wire)
    assert decoded == msg
    assert wire[consumed:] == trailing


def test_header_layout_golden():
    wire = encode_message(RelayMessage(MsgType.APDU_REQUEST, h2b("a0f2000000")))
    # type byte, 4-byte big-endian length, payload
    assert wire == bytes([MsgType.APDU_REQUEST]) + h2b("00000005a0f2000000")


def test_unknown_type_rejected():
    with pytest.raises(UnknownType):
        decode_message_bytes(b"\xfe\x00\x00\x00\x00")


def test_oversized_frame_rejected():
    huge = (MAX_PAYLOAD + 1).to_bytes(4, "big")
    with pytest.raises(OversizedFrame):
        decode_message_bytes(bytes([MsgType.APDU_REQUEST]) + huge)


def test_stream_decode_and_truncation():
    clock = VirtualClock()
    a, b = loopback_pair(clock)
    msg = RelayMessage(MsgType.PING, b"\x01\x02")
    with clock.attach_current_thread():
        a.send(encode_message(msg))
        assert decode_message(b, deadline=clock.now() + 1.0) == msg
        # close mid-payload: header promises 4 bytes, only 2 arrive
        a.send(bytes([MsgType.PONG]) + h2b("00000004aabb"))
        a.close()
        with pytest.raises(TruncatedStream):
            decode_message(b, deadline=clock.now() + 1.0)


@given(st.sampled_from([ROLE_PROBE, ROLE_PROVIDER]), st.binary(min_size=16, max_size=16))
def test_hello_round_trip(role, session_id):
    payload = hello_payload(role, session_id)
    assert payload[0] == WIRE_VERSION
    assert parse_hello(payload) == (role, session_id)
