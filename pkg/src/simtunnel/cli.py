"""Command-line entry points: provide, probe, decode, replay.

Exit codes are a stable contract:
    0  success
    2  configuration or input parse error
    3  listener bind error
    4  tunnel failure
    5  expectation or replay mismatch
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading

from . import __version__
from .apdu import ApduError, describe, parse_command, parse_response
from .clock import SystemClock
from .hexutil import b2h, h2b
from .iso7816.atr import AtrError, parse_atr
from .iso7816.channel import loopback_pair
from .iso7816.params import Protocol, ProtocolParams
from .modem import VirtualModem, run_script
from .relay.probe import Probe, ProbeOptions, TunnelClosed
from .relay.provider import AtrMode, EndpointPolicy, ProviderServer, DEFAULT_PORT
from .relay.stream import connect_stream
from .relay.frames import MsgType, RelayMessage
from .relay.probe import TunnelClient
from .rewrite import RuleError, load_rules_file, rules_fingerprint
from .sap.client import SapClient
from .trace.gsmtap import GsmtapExporter
from .trace.jsonl import JsonlWriter, read_trace
from .trace.records import Recorder, TraceError, content_hash
from .trace.replay import replay_trace
from .vsim import ProfileError, VirtualCard, load_profile_file

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BIND = 3
EXIT_TUNNEL = 4
EXIT_MISMATCH = 5

log = logging.getLogger("simtunnel")


class ConfigError(Exception):
    pass


def parse_duration(text: str) -> float:
    """Seconds from '1500ms', '1.5s', or a bare number of seconds."""
    text = text.strip()
    try:
        if text.endswith("ms"):
            return float(text[:-2]) / 1000.0
        if text.endswith("s"):
            return float(text[:-1])
        return float(text)
    except ValueError:
        raise ConfigError("bad duration %r (use e.g. 500ms or 1.5s)" % text) from None


def parse_hostport(text: str, default_port: int) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    if not host:
        host = "127.0.0.1"
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError("bad address %r" % text) from None


def parse_protocol(text: str) -> Protocol:
    try:
        return {"t0": Protocol.T0, "t1": Protocol.T1}[text.lower()]
    except KeyError:
        raise ConfigError("protocol must be t0 or t1") from None


def _apply_config_file(argv, args: argparse.Namespace, parser: argparse.ArgumentParser):
    """Config file keys mirror the subcommand's flags; explicit command-line
    flags win.  Implemented by installing the file's values as subparser
    defaults and re-parsing."""
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("config file: %s" % exc) from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    subparser = parser.sub_commands[args.command]
    known = {a.dest for a in subparser._actions}
    overrides = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise ConfigError("unknown config key %r" % key)
        overrides[dest] = value
    subparser.set_defaults(**overrides)
    return parser.parse_args(argv)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simtunnel",
        description="Inspect, rewrite, and relay SIM card traffic between a modem and a (remote) SIM.",
    )
    parser.add_argument("--version", action="version", version="simtunnel " + __version__)
    sub = parser.add_subparsers(dest="command", required=True)
    parser.sub_commands = {}

    p = sub.add_parser("provide", help="serve a SIM backend to tunnel probes")
    p.add_argument("--profile", help="virtual card profile (JSON)")
    p.add_argument("--sap", help="SAP server address host:port backing the provider")
    p.add_argument("--listen", default=":%d" % DEFAULT_PORT, help="listen address (default :%d)" % DEFAULT_PORT)
    p.add_argument("--trace", help="write a JSONL trace of served APDUs")
    p.add_argument("--response-deadline", default="30s", help="per-APDU backend deadline")
    p.add_argument("--config", help="JSON config file (same keys as flags)")

    p = sub.add_parser("probe", help="present a card to a modem, forwarding APDUs over the tunnel")
    p.add_argument("--connect", required=True, help="provider address host:port")
    p.add_argument("--rules", help="rewrite rules (JSON)")
    p.add_argument("--trace", help="write a JSONL trace")
    p.add_argument("--gsmtap", nargs="?", const="127.0.0.1:4729", help="also export records via GSMTAP UDP")
    p.add_argument("--protocol", default="t0", help="t0 or t1")
    p.add_argument("--virtual-modem", help="drive a scripted virtual modem (see docs/scripts.md)")
    p.add_argument("--latency", default="0ms", help="artificial per-APDU tunnel latency")
    p.add_argument("--atr-mode", default="synthetic", choices=["synthetic", "mirror_historical"])
    p.add_argument("--null-interval", default="200ms", help="T=0 NULL / T=1 WTX heartbeat interval")
    p.add_argument("--config", help="JSON config file (same keys as flags)")

    p = sub.add_parser("decode", help="pretty-print a trace, an ATR, or a single APDU")
    p.add_argument("trace", nargs="?", help="trace JSONL file")
    p.add_argument("--atr", nargs="+", help="decode an ATR (hex, spaces allowed)")
    p.add_argument("--apdu", nargs="+", help="decode a command APDU (hex, spaces allowed)")

    p = sub.add_parser("replay", help="re-issue a recorded trace and diff the responses")
    p.add_argument("trace", help="trace JSONL file")
    p.add_argument("--profile", help="replay against a local virtual card")
    p.add_argument("--connect", help="replay through a tunnel provider host:port")
    p.add_argument("--paced", action="store_true", help="reproduce original inter-command gaps")
    for name, action in list(sub.choices.items()):
        parser.sub_commands[name] = action
    return parser


# -- provide ---------------------------------------------------------------

def cmd_provide(args: argparse.Namespace) -> int:
    if bool(args.profile) == bool(args.sap):
        print("error: exactly one of --profile / --sap is required", file=sys.stderr)
        return EXIT_CONFIG
    host, port = parse_hostport(args.listen, DEFAULT_PORT)
    policy = EndpointPolicy(response_deadline=parse_duration(args.response_deadline))

    if args.profile:
        profile = load_profile_file(args.profile)
        backend_factory = lambda: VirtualCard(profile)  # noqa: E731
    else:
        sap_host, sap_port = parse_hostport(args.sap, 7817)

        def backend_factory():
            client = SapClient(connect_stream(sap_host, sap_port))
            client.connect()
            return client

    recorder = None
    trace_fh = None
    if args.trace:
        trace_fh = open(args.trace, "w", encoding="utf-8")
        recorder = Recorder(SystemClock(), sinks=[JsonlWriter(trace_fh)])

    try:
        server = ProviderServer(backend_factory, host or "0.0.0.0", port, policy, recorder=recorder)
    except OSError as exc:
        print("error: cannot bind %s:%d: %s" % (host, port, exc), file=sys.stderr)
        return EXIT_BIND

    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    server.start()
    log.info("provider listening on %s:%d", host or "0.0.0.0", server.port)
    done.wait()
    server.stop()
    if recorder:
        recorder.close()
    if trace_fh:
        trace_fh.close()
    return EXIT_OK


# -- probe -----------------------------------------------------------------

def cmd_probe(args: argparse.Namespace) -> int:
    host, port = parse_hostport(args.connect, DEFAULT_PORT)
    protocol = parse_protocol(args.protocol)
    latency = parse_duration(args.latency)
    null_interval = parse_duration(args.null_interval)

    engine = None
    rules_hash = ""
    if args.rules:
        try:
            engine = load_rules_file(args.rules)
            rules_hash = rules_fingerprint(args.rules)
        except (OSError, RuleError, ValueError, json.JSONDecodeError) as exc:
            print("error: rules: %s" % exc, file=sys.stderr)
            return EXIT_CONFIG

    sinks = []
    trace_fh = None
    if args.trace:
        trace_fh = open(args.trace, "w", encoding="utf-8")
        sinks.append(JsonlWriter(trace_fh))
    if args.gsmtap:
        g_host, g_port = parse_hostport(args.gsmtap, 4729)
        sinks.append(GsmtapExporter(g_host, g_port))

    clock = SystemClock()
    try:
        tunnel_stream = connect_stream(host, port)
    except OSError as exc:
        print("error: cannot reach provider %s:%d: %s" % (host, port, exc), file=sys.stderr)
        return EXIT_TUNNEL

    modem_end, card_end = loopback_pair(clock)
    from .iso7816.params import TimingConfig

    options = ProbeOptions(
        atr_mode=AtrMode(args.atr_mode),
        params=ProtocolParams(active_protocol=protocol),
        timing=TimingConfig(null_interval=null_interval),
        latency=latency,
    )
    probe = Probe(card_end, tunnel_stream, clock, options, engine=engine)
    recorder = Recorder(clock, session_id=probe.tunnel.session_id, rules_hash=rules_hash, sinks=sinks) if sinks else None
    probe.recorder = recorder

    failure: list[BaseException] = []

    def run_probe():
        try:
            probe.run()
        except (TunnelClosed, Exception) as exc:  # noqa: BLE001
            failure.append(exc)

    t = threading.Thread(target=run_probe, daemon=True)
    t.start()

    exit_code = EXIT_OK
    if args.virtual_modem:
        try:
            with open(args.virtual_modem, "r", encoding="utf-8") as fh:
                script = fh.read()
        except OSError as exc:
            print("error: %s" % exc, file=sys.stderr)
            return EXIT_CONFIG
        modem = VirtualModem(modem_end, clock, protocol)
        try:
            modem.connect()
            result = run_script(modem, script)
        except Exception as exc:  # tunnel/channel trouble surfaces here
            print("error: session failed: %s" % exc, file=sys.stderr)
            exit_code = EXIT_TUNNEL
        else:
            for line in result.failures:
                print("expectation failed: %s" % line, file=sys.stderr)
            if not result.ok:
                exit_code = EXIT_MISMATCH
        modem_end.close()
        t.join(timeout=10)
    else:
        # no local modem: keep the probe running until interrupted
        done = threading.Event()
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: done.set())
        done.wait()
        modem_end.close()
        t.join(timeout=10)

    if failure and exit_code == EXIT_OK:
        print("error: tunnel failure: %s" % failure[0], file=sys.stderr)
        exit_code = EXIT_TUNNEL
    if trace_fh:
        trace_fh.close()
    return exit_code


# -- decode ----------------------------------------------------------------

def _decode_atr(hex_text: str) -> int:
    try:
        atr = parse_atr(h2b(hex_text))
    except (ValueError, AtrError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    print("convention: %s" % atr.convention.name.lower())
    for level, kind, value in atr.interface_bytes:
        print("%s%d: %02X" % (kind, level, value))
    protos = sorted(p.name for p in atr.offered_protocols)
    print("protocols: %s" % ", ".join(protos))
    fi, di = atr.fidi
    print("Fi/Di: %d/%d" % (fi, di))
    print("historical: %s" % (b2h(atr.historical_bytes) or "(none)"))
    print("TCK: %s" % ("%02X ok" % atr.tck if atr.tck is not None else "absent"))
    return EXIT_OK


def _decode_apdu(hex_text: str) -> int:
    try:
        cmd = parse_command(h2b(hex_text))
    except (ValueError, ApduError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    print(describe(cmd))
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    given = [x for x in (args.trace, args.atr, args.apdu) if x]
    if len(given) != 1:
        print("error: give exactly one of a trace file, --atr, or --apdu", file=sys.stderr)
        return EXIT_CONFIG
    if args.atr:
        return _decode_atr("".join(args.atr))
    if args.apdu:
        return _decode_apdu("".join(args.apdu))
    try:
        with open(args.trace, "r", encoding="utf-8") as fh:
            header, records = read_trace(fh)
    except (OSError, TraceError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    print("# session %s, tool %s" % (b2h(header.session_id), header.tool_version))
    for rec in records:
        try:
            cmd = parse_command(rec.command)
            text = describe(cmd, parse_response(rec.response))
        except (ValueError, ApduError):
            text = "raw %s -> %s" % (b2h(rec.command), b2h(rec.response))
        flags = ""
        if rec.rewritten_command or rec.rewritten_response:
            flags = " [rewritten]"
        if rec.tags:
            flags += " [%s]" % ",".join(rec.tags)
        print("%5d %10.3fms %s%s" % (rec.seq, rec.t_command_us / 1000.0, text, flags))
    return EXIT_OK


# -- replay ----------------------------------------------------------------

def cmd_replay(args: argparse.Namespace) -> int:
    if bool(args.profile) == bool(args.connect):
        print("error: exactly one of --profile / --connect is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.trace, "r", encoding="utf-8") as fh:
            _header, records = read_trace(fh)
    except (OSError, TraceError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG

    if args.profile:
        try:
            card = VirtualCard(load_profile_file(args.profile))
        except (OSError, ProfileError, ValueError) as exc:
            print("error: profile: %s" % exc, file=sys.stderr)
            return EXIT_CONFIG
        exchange = card.exchange
        cleanup = lambda: None  # noqa: E731
    else:
        host, port = parse_hostport(args.connect, DEFAULT_PORT)
        clock = SystemClock()
        try:
            stream = connect_stream(host, port)
        except OSError as exc:
            print("error: cannot reach provider: %s" % exc, file=sys.stderr)
            return EXIT_TUNNEL
        client = TunnelClient(stream, clock)
        try:
            client.hello(clock.now() + 10.0)
        except TunnelClosed as exc:
            print("error: %s" % exc, file=sys.stderr)
            return EXIT_TUNNEL

        def exchange(cmd: bytes) -> bytes:
            reply = client.request(
                RelayMessage(MsgType.APDU_REQUEST, cmd),
                {MsgType.APDU_RESPONSE},
                clock.now() + 30.0,
            )
            if reply.msg_type is not MsgType.APDU_RESPONSE:
                return b"\x6f\x00"
            return reply.payload

        cleanup = client.close

    try:
        report = replay_trace(records, exchange, paced=args.paced)
    except TunnelClosed as exc:
        print("error: tunnel failure: %s" % exc, file=sys.stderr)
        return EXIT_TUNNEL
    finally:
        cleanup()
    print("replayed %d commands, %d matched" % (report.total, report.matched))
    for m in report.mismatches:
        print(
            "mismatch at seq %d: %s expected %s got %s"
            % (m.seq, b2h(m.command), b2h(m.expected), b2h(m.actual))
        )
    return EXIT_OK if report.ok else EXIT_MISMATCH


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SIMTUNNEL_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(argv, args, parser)
        handler = {
            "provide": cmd_provide,
            "probe": cmd_probe,
            "decode": cmd_decode,
            "replay": cmd_replay,
        }[args.command]
        return handler(args)
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
