"""Tunnel session behavior under a virtual clock: the full
modem <-> probe <-> provider <-> card chain, error mapping, keepalive,
and reset propagation — all deterministic and instant in real time."""

import pytest

from simtunnel.backend import BackendUnavailable, SimBackend
from simtunnel.clock import VirtualClock
from simtunnel.hexutil import h2b
from simtunnel.iso7816.channel import ChannelClosed, ChannelError, loopback_pair
from simtunnel.iso7816.params import Protocol, ProtocolParams
from simtunnel.modem import VirtualModem
from simtunnel.relay import (
    EndpointPolicy,
    ErrorCode,
    MsgType,
    Probe,
    ProbeOptions,
    RelayMessage,
    TunnelClient,
    serve_provider_session,
)
from simtunnel.rewrite import compile_rules
from simtunnel.vsim import VirtualCard

SHORT_SESSION = [
    "a0a40000023f00",
    "a0a40000022fe2",
    "a0b000000a",
    "a0f2000000",
]


def run_chain(profile, commands, latency=0.0, protocol=Protocol.T0,
              engine=None, keepalive=0.0, idle_before_close=0.0):
    """Drive commands through the full loopback chain; returns
    (modem log, provider session stats, clock, probe)."""
    clock = VirtualClock()
    modem_end, card_end = loopback_pair(clock)
    probe_stream, provider_stream = loopback_pair(clock)
    box = {}

    def provider():
        box["stats"] = serve_provider_session(
            provider_stream, VirtualCard(profile), clock, EndpointPolicy()
        )

    opts = ProbeOptions(
        params=ProtocolParams(active_protocol=protocol),
        latency=latency,
        keepalive_interval=keepalive,
    )
    probe = Probe(card_end, probe_stream, clock, opts, engine=engine)
    provider_thread = clock.spawn(provider)
    clock.spawn(probe.run)
    with clock.attach_current_thread():
        modem = VirtualModem(modem_end, clock, protocol)
        modem.connect()
        for c in commands:
            modem.exchange_raw(h2b(c))
        if idle_before_close:
            clock.sleep(idle_before_close)
        modem_end.close()
    provider_thread.join(timeout=10)
    return modem.log, box["stats"], clock, probe


def test_basic_session(profile):
    log, stats, _, _ = run_chain(profile, SHORT_SESSION)
    sws = [resp[-2:] for _, resp in log]
    assert sws == [h2b("9000")] * 4
    assert stats.apdus == 4
    assert stats.errors == 0


def test_latency_invariance(profile):
    log_fast, _, clock_fast, _ = run_chain(profile, SHORT_SESSION)
    log_slow, _, clock_slow, _ = run_chain(profile, SHORT_SESSION, latency=1.0)
    assert log_fast == log_slow
    assert clock_slow.now() >= clock_fast.now() + 4.0


def test_t1_session_matches_t0(profile):
    log_t0, _, _, _ = run_chain(profile, SHORT_SESSION, protocol=Protocol.T0)
    log_t1, _, _, _ = run_chain(profile, SHORT_SESSION, protocol=Protocol.T1)
    assert log_t0 == log_t1


def test_synthesized_rule_never_reaches_provider(profile):
    engine = compile_rules(
        [{"name": "eat-status", "direction": "to_card",
          "match": {"ins": "f2"}, "action": {"type": "drop", "sw": "6d00"}}]
    )
    log, stats, _, _ = run_chain(profile, SHORT_SESSION, engine=engine)
    assert log[-1][1] == h2b("6d00")  # modem saw the synthesized answer
    assert stats.apdus == 3  # STATUS never crossed the tunnel


def test_keepalive_pings_flow_while_idle(profile):
    _, stats, _, _ = run_chain(
        profile, SHORT_SESSION, keepalive=1.0, idle_before_close=5.0
    )
    assert stats.pings >= 3


class UnavailableBackend(SimBackend):
    def atr(self):
        return h2b("3b00")

    def exchange(self, command):
        raise BackendUnavailable("card removed")

    def reset(self):
        pass


class SlowBackend(UnavailableBackend):
    def __init__(self, clock):
        self.clock = clock

    def exchange(self, command):
        self.clock.sleep(100.0)
        return h2b("9000")


def tunnel_fixture(clock, backend, policy=None):
    probe_stream, provider_stream = loopback_pair(clock)
    clock.spawn(
        lambda: serve_provider_session(
            provider_stream, backend, clock, policy or EndpointPolicy()
        )
    )
    return TunnelClient(probe_stream, clock)


def request(client, clock, msg_type, payload=b"", expect=None):
    return client.request(
        RelayMessage(msg_type, payload),
        expect or {MsgType.APDU_RESPONSE},
        clock.now() + 5.0,
    )


def test_error_code_backend_unavailable():
    clock = VirtualClock()
    with clock.attach_current_thread():
        client = tunnel_fixture(clock, UnavailableBackend())
        client.hello(clock.now() + 5.0)
        reply = request(client, clock, MsgType.APDU_REQUEST, h2b("a0f2000000"))
        assert reply.msg_type is MsgType.ERROR
        assert reply.payload[0] == ErrorCode.BACKEND_UNAVAILABLE
        client.close()


def test_error_code_backend_timeout(profile):
    clock = VirtualClock()
    with clock.attach_current_thread():
        client = tunnel_fixture(
            clock, SlowBackend(clock),
            EndpointPolicy(response_deadline=2.0),
        )
        client.hello(clock.now() + 5.0)
        reply = request(client, clock, MsgType.APDU_REQUEST, h2b("a0f2000000"))
        assert reply.msg_type is MsgType.ERROR
        assert reply.payload[0] == ErrorCode.BACKEND_TIMEOUT
        # session survives the timeout
        reply = request(client, clock, MsgType.PING, expect={MsgType.PONG})
        assert reply.msg_type is MsgType.PONG
        client.close()


def test_error_code_malformed_apdu(profile):
    clock = VirtualClock()
    with clock.attach_current_thread():
        client = tunnel_fixture(clock, VirtualCard(profile))
        client.hello(clock.now() + 5.0)
        reply = request(client, clock, MsgType.APDU_REQUEST, b"\xa0")
        assert reply.msg_type is MsgType.ERROR
        assert reply.payload[0] == ErrorCode.MALFORMED_APDU
        client.close()


def test_out_of_order_message_faults_session(profile):
    clock = VirtualClock()
    with clock.attach_current_thread():
        client = tunnel_fixture(clock, VirtualCard(profile))
        client.hello(clock.now() + 5.0)
        reply = request(
            client, clock, MsgType.APDU_RESPONSE, h2b("9000"),
            expect={MsgType.APDU_RESPONSE},
        )
        assert reply.msg_type is MsgType.ERROR
        assert reply.payload[0] == ErrorCode.MALFORMED_APDU
        client.close()


def test_atr_request_serves_backend_atr(profile):
    clock = VirtualClock()
    card = VirtualCard(profile)
    with clock.attach_current_thread():
        client = tunnel_fixture(clock, card)
        client.hello(clock.now() + 5.0)
        reply = request(
            client, clock, MsgType.ATR_REQUEST, expect={MsgType.ATR_RESPONSE}
        )
        assert reply.payload == card.atr()
        client.close()


def test_reset_propagates_to_backend(profile):
    clock = VirtualClock()
    modem_end, card_end = loopback_pair(clock)
    probe_stream, provider_stream = loopback_pair(clock)
    box = {}

    def provider():
        box["stats"] = serve_provider_session(
            provider_stream, VirtualCard(profile), clock, EndpointPolicy()
        )

    probe = Probe(card_end, probe_stream, clock, ProbeOptions(keepalive_interval=0))
    thread = clock.spawn(provider)
    clock.spawn(probe.run)
    with clock.attach_current_thread():
        modem = VirtualModem(modem_end, clock)
        modem.connect()
        assert modem.exchange_raw(h2b("a0a40000027f20")).sw == 0x9000
        modem.connect(hard_reset=True)
        assert modem.exchange_raw(h2b("a0f2000000")).sw == 0x9000
        modem_end.close()
    thread.join(timeout=10)
    assert box["stats"].resets == 1


def test_keepalive_misses_close_tunnel(profile):
    clock = VirtualClock()
    modem_end, card_end = loopback_pair(clock)
    probe_stream, provider_stream = loopback_pair(clock)

    def deaf_provider():
        # answers the handshake, then goes silent
        from simtunnel.relay.frames import (
            decode_message, encode_message, hello_payload, parse_hello,
            ROLE_PROVIDER,
        )
        first = decode_message(provider_stream, float("inf"))
        _, session_id = parse_hello(first.payload)
        provider_stream.send(
            encode_message(
                RelayMessage(MsgType.HELLO, hello_payload(ROLE_PROVIDER, session_id))
            )
        )
        try:
            while True:
                decode_message(provider_stream, float("inf"))
        except (ChannelError, Exception):
            pass

    opts = ProbeOptions(keepalive_interval=1.0, keepalive_misses=3)
    probe = Probe(card_end, probe_stream, clock, opts)
    clock.spawn(deaf_provider)
    clock.spawn(probe.run)
    with clock.attach_current_thread():
        modem = VirtualModem(modem_end, clock)
        modem.connect()
        # each ping waits a full interval for its reply: 3 misses by ~t=6
        clock.wait_for(lambda: probe.tunnel.closed, clock.now() + 30.0)
        assert probe.tunnel.closed
        modem_end.close()
