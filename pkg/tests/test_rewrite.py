"""Rewrite rule compiler and engine tests."""

import pytest

from conftest import REFERENCE_IMSI
from simtunnel.hexutil import h2b
from simtunnel.rewrite import (
    Direction,
    Drop,
    Matcher,
    Pass,
    ReplaceAt,
    RuleError,
    SetResponse,
    Tag,
    compile_rules,
)
from simtunnel.vsim.profile import decode_imsi, encode_imsi


def rules(*docs):
    return compile_rules(list(docs))


# -- compiler ---------------------------------------------------------------

def test_compile_all_action_types():
    engine = rules(
        {"action": {"type": "pass"}},
        {"action": {"type": "drop", "sw": "6a82"}},
        {"action": {"type": "replace_at", "offset": 3, "bytes": "aa"}},
        {"action": {"type": "set_response", "data": "01", "sw": "9000"}},
        {"action": {"type": "tag", "label": "seen"}},
    )
    kinds = [type(r.action) for r in engine.rules]
    assert kinds == [Pass, Drop, ReplaceAt, SetResponse, Tag]
    assert engine.rules[0].direction is Direction.BOTH
    assert engine.rules[0].enabled


def test_compile_wrapped_document():
    engine = compile_rules({"rules": [{"action": {"type": "pass"}}]})
    assert len(engine.rules) == 1


@pytest.mark.parametrize(
    "doc",
    [
        {"action": {"type": "nope"}},
        {"action": {"type": "drop", "sw": "6a"}},
        {"action": {"type": "tag"}},
        {"action": {"type": "pass"}, "extra": 1},
        {"action": {"type": "pass"}, "direction": "sideways"},
        {"action": {"type": "pass"}, "match": {"ins": "zz"}},
        {"action": {"type": "pass"}, "match": {"ins": "100"}},
        {"action": {"type": "pass"}, "match": {"p1p2": "000000"}},
        {"action": {"type": "pass"}, "match": {"weird": 1}},
        {},
    ],
)
def test_compile_rejects_bad_rules(doc):
    with pytest.raises(RuleError):
        rules(doc)


def test_compile_rejects_non_list():
    with pytest.raises(RuleError):
        compile_rules("rules")


# -- matching ---------------------------------------------------------------

def test_matcher_fields():
    m = Matcher(cla=0xA0, ins=0xB0, p1p2=h2b("0000"))
    assert m.matches(h2b("a0b0000009"), None)
    assert not m.matches(h2b("00b0000009"), None)
    assert not m.matches(h2b("a0b2000009"), None)
    assert not m.matches(h2b("a0b0000109"), None)
    assert not m.matches(h2b("a0"), None)


def test_matcher_cla_mask():
    # match any logical channel of the 0x00 class family
    m = Matcher(cla=0x00, cla_mask=0xFC)
    assert m.matches(h2b("01a4000000"), None)
    assert m.matches(h2b("03a4000000"), None)
    assert not m.matches(h2b("a0a4000000"), None)


def test_matcher_data_prefix_and_selected_file():
    m = Matcher(ins=0xD6, selected_file=0x6F07)
    assert m.matches(h2b("a0d600000100"), 0x6F07)
    assert not m.matches(h2b("a0d600000100"), 0x2FE2)
    assert not m.matches(h2b("a0d600000100"), None)
    p = Matcher(data_prefix=h2b("3f00"))
    assert p.matches(h2b("a0a40000023f00"), None)
    assert not p.matches(h2b("a0a40000027f20"), None)


def test_selected_file_context_follows_selects():
    engine = rules(
        {"direction": "to_card", "match": {"ins": "b0", "selected_file": "6f07"},
         "action": {"type": "drop", "sw": "6982"}},
    )
    ctx = engine.new_context()
    # read before any select: rule does not match
    assert not engine.apply_command(h2b("a0b0000009"), ctx).synthesized
    engine.apply_command(h2b("a0a40000026f07"), ctx)
    assert ctx.selected_file == 0x6F07
    v = engine.apply_command(h2b("a0b0000009"), ctx)
    assert v.synthesized and v.data == h2b("6982")
    engine.apply_command(h2b("a0a40000022fe2"), ctx)
    assert not engine.apply_command(h2b("a0b0000009"), ctx).synthesized


# -- actions ----------------------------------------------------------------

def test_drop_to_card_synthesizes():
    engine = rules({"direction": "to_card", "match": {"ins": "f2"},
                    "action": {"type": "drop", "sw": "6d00"}})
    v = engine.apply_command(h2b("a0f2000000"), engine.new_context())
    assert v.synthesized and v.rewritten and v.data == h2b("6d00")


def test_set_response_to_modem_replaces():
    engine = rules({"direction": "to_modem", "match": {"ins": "b0"},
                    "action": {"type": "set_response", "data": "ff", "sw": "9000"}})
    ctx = engine.new_context()
    engine.apply_command(h2b("a0b0000001"), ctx)
    v = engine.apply_response(h2b("aa9000"), ctx)
    assert v.rewritten and v.data == h2b("ff9000")


def test_response_rule_keyed_on_eliciting_command():
    engine = rules({"direction": "to_modem", "match": {"ins": "b0"},
                    "action": {"type": "replace_at", "offset": 0, "bytes": "ee"}})
    ctx = engine.new_context()
    engine.apply_command(h2b("a0f2000000"), ctx)
    assert engine.apply_response(h2b("aa9000"), ctx).data == h2b("aa9000")
    engine.apply_command(h2b("a0b0000001"), ctx)
    assert engine.apply_response(h2b("aa9000"), ctx).data == h2b("ee9000")


def test_replace_at_out_of_bounds_fails_open():
    engine = rules({"direction": "to_modem",
                    "action": {"type": "replace_at", "offset": 10, "bytes": "ee"}})
    ctx = engine.new_context()
    engine.apply_command(h2b("a0b0000001"), ctx)
    v = engine.apply_response(h2b("aa9000"), ctx)
    assert v.data == h2b("aa9000") and not v.rewritten
    assert engine.errors == 1


def test_tag_accumulates_and_falls_through():
    engine = rules(
        {"match": {"ins": "a4"}, "action": {"type": "tag", "label": "select"}},
        {"match": {"data_prefix": "3f00"}, "action": {"type": "tag", "label": "mf"}},
    )
    v = engine.apply_command(h2b("a0a40000023f00"), engine.new_context())
    assert v.tags == ("select", "mf")
    assert not v.rewritten and v.data == h2b("a0a40000023f00")


def test_pass_stops_rule_evaluation():
    engine = rules(
        {"match": {"ins": "f2"}, "action": {"type": "pass"}},
        {"action": {"type": "drop", "sw": "6d00"}},
    )
    ctx = engine.new_context()
    assert not engine.apply_command(h2b("a0f2000000"), ctx).synthesized
    assert engine.apply_command(h2b("a0b0000001"), ctx).synthesized


def test_disabled_rule_is_ignored():
    engine = rules({"enabled": False, "action": {"type": "drop", "sw": "6d00"}})
    v = engine.apply_command(h2b("a0f2000000"), engine.new_context())
    assert not v.synthesized


# -- the identity-substitution pattern --------------------------------------

def test_imsi_substitution_rule():
    decoy = "999990123456789"
    decoy_body = encode_imsi(decoy)
    engine = rules(
        {"direction": "to_modem",
         "match": {"ins": "b0", "selected_file": "6f07"},
         "action": {"type": "replace_at", "offset": 0,
                    "bytes": decoy_body.hex()}},
    )
    ctx = engine.new_context()
    engine.apply_command(h2b("a0a40000026f07"), ctx)
    engine.apply_command(h2b("a0b0000009"), ctx)
    served = encode_imsi(REFERENCE_IMSI) + h2b("9000")
    v = engine.apply_response(served, ctx)
    assert v.rewritten
    assert decode_imsi(v.data[:-2]) == decoy
    assert v.data[-2:] == h2b("9000")
