"""On-path APDU rewriting.

Rules are declarative (docs/rules.md): a matcher over the command plus an
action.  Matchers always look at the *command* bytes — for a rule in the
to-modem direction, that is the command which elicited the response being
rewritten.  Rules run in declaration order; `tag` rules annotate and fall
through, every other action is terminal.  An action that cannot be
applied (e.g. `replace_at` past the end) fails open: traffic passes
unchanged and an error counter is bumped.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from .hexutil import h2b

SELECT_INS = 0xA4


class RuleError(ValueError):
    pass


class Direction(enum.Enum):
    TO_CARD = "to_card"
    TO_MODEM = "to_modem"
    BOTH = "both"


@dataclass(frozen=True)
class Matcher:
    """All present fields must match; an empty matcher matches everything."""

    cla: Optional[int] = None
    cla_mask: int = 0xFF
    ins: Optional[int] = None
    p1p2: Optional[bytes] = None
    data_prefix: Optional[bytes] = None
    selected_file: Optional[int] = None

    def matches(self, command: bytes, selected_file: Optional[int]) -> bool:
        if len(command) < 4:
            return False
        if self.cla is not None and (command[0] & self.cla_mask) != self.cla:
            return False
        if self.ins is not None and command[1] != self.ins:
            return False
        if self.p1p2 is not None and command[2:4] != self.p1p2:
            return False
        if self.data_prefix is not None:
            if not command[5:].startswith(self.data_prefix):
                return False
        if self.selected_file is not None and selected_file != self.selected_file:
            return False
        return True


@dataclass(frozen=True)
class Pass:
    pass


@dataclass(frozen=True)
class Drop:
    sw: bytes  # two status bytes returned instead of forwarding


@dataclass(frozen=True)
class ReplaceAt:
    offset: int
    value: bytes


@dataclass(frozen=True)
class SetResponse:
    data: bytes
    sw: bytes


@dataclass(frozen=True)
class Tag:
    label: str


Action = object  # one of the five dataclasses above


@dataclass(frozen=True)
class RewriteRule:
    name: str
    action: Action
    matcher: Matcher = Matcher()
    direction: Direction = Direction.BOTH
    enabled: bool = True


@dataclass(frozen=True)
class Verdict:
    data: bytes  # bytes to forward (or, if synthesized, to answer with)
    synthesized: bool = False  # command was answered locally, not forwarded
    rewritten: bool = False
    tags: tuple = ()


@dataclass
class SessionContext:
    """Per-session matcher context, fed by the engine as commands pass."""

    selected_file: Optional[int] = None
    last_command: bytes = b""


@dataclass
class RewriteEngine:
    rules: list = field(default_factory=list)
    errors: int = 0

    def new_context(self) -> SessionContext:
        return SessionContext()

    def _observe(self, command: bytes, ctx: SessionContext) -> None:
        ctx.last_command = bytes(command)
        if len(command) >= 7 and command[1] == SELECT_INS and command[4] == 2:
            ctx.selected_file = int.from_bytes(command[5:7], "big")

    def apply_command(self, command: bytes, ctx: SessionContext) -> Verdict:
        verdict = self._apply(Direction.TO_CARD, command, command, ctx)
        self._observe(verdict.data if not verdict.synthesized else command, ctx)
        return verdict

    def apply_response(self, response: bytes, ctx: SessionContext) -> Verdict:
        return self._apply(Direction.TO_MODEM, ctx.last_command, response, ctx)

    def _apply(self, direction: Direction, command: bytes, subject: bytes, ctx: SessionContext) -> Verdict:
        tags: list[str] = []
        for rule in self.rules:
            if not rule.enabled:
                continue
            if rule.direction not in (direction, Direction.BOTH):
                continue
            if not rule.matcher.matches(command, ctx.selected_file):
                continue
            act = rule.action
            if isinstance(act, Tag):
                tags.append(act.label)
                continue
            if isinstance(act, Pass):
                break
            if isinstance(act, Drop):
                if direction is Direction.TO_CARD:
                    return Verdict(act.sw, synthesized=True, rewritten=True, tags=tuple(tags))
                return Verdict(act.sw, rewritten=True, tags=tuple(tags))
            if isinstance(act, SetResponse):
                body = act.data + act.sw
                if direction is Direction.TO_CARD:
                    return Verdict(body, synthesized=True, rewritten=True, tags=tuple(tags))
                return Verdict(body, rewritten=True, tags=tuple(tags))
            if isinstance(act, ReplaceAt):
                end = act.offset + len(act.value)
                if act.offset < 0 or end > len(subject):
                    self.errors += 1
                    break
                patched = subject[: act.offset] + act.value + subject[end:]
                return Verdict(patched, rewritten=True, tags=tuple(tags))
            self.errors += 1  # unreachable with a validated rule set
            break
        return Verdict(bytes(subject), tags=tuple(tags))


_RULE_KEYS = {"name", "direction", "enabled", "match", "action"}
_MATCH_KEYS = {"cla", "cla_mask", "ins", "p1p2", "data_prefix", "selected_file"}


def _byte(value, what: str) -> int:
    try:
        v = int(str(value), 16)
    except ValueError:
        raise RuleError("bad %s %r" % (what, value)) from None
    if not 0 <= v <= 0xFF:
        raise RuleError("%s %r out of range" % (what, value))
    return v


def _compile_matcher(doc: dict) -> Matcher:
    extra = set(doc) - _MATCH_KEYS
    if extra:
        raise RuleError("unknown match keys: %s" % ", ".join(sorted(extra)))
    p1p2 = h2b(doc["p1p2"]) if "p1p2" in doc else None
    if p1p2 is not None and len(p1p2) != 2:
        raise RuleError("p1p2 must be two bytes")
    selected = None
    if "selected_file" in doc:
        selected = int(str(doc["selected_file"]), 16)
        if not 0 <= selected <= 0xFFFF:
            raise RuleError("selected_file out of range")
    return Matcher(
        cla=_byte(doc["cla"], "cla") if "cla" in doc else None,
        cla_mask=_byte(doc.get("cla_mask", "ff"), "cla_mask"),
        ins=_byte(doc["ins"], "ins") if "ins" in doc else None,
        p1p2=p1p2,
        data_prefix=h2b(doc["data_prefix"]) if "data_prefix" in doc else None,
        selected_file=selected,
    )


def _compile_action(doc: dict) -> Action:
    kind = doc.get("type")
    if kind == "pass":
        return Pass()
    if kind == "drop":
        sw = h2b(doc.get("sw", "6d00"))
        if len(sw) != 2:
            raise RuleError("drop sw must be two bytes")
        return Drop(sw)
    if kind == "replace_at":
        return ReplaceAt(int(doc["offset"]), h2b(doc["bytes"]))
    if kind == "set_response":
        sw = h2b(doc.get("sw", "9000"))
        if len(sw) != 2:
            raise RuleError("set_response sw must be two bytes")
        return SetResponse(h2b(doc.get("data", "")), sw)
    if kind == "tag":
        label = doc.get("label")
        if not label:
            raise RuleError("tag action needs a label")
        return Tag(str(label))
    raise RuleError("unknown action type %r" % (kind,))


def compile_rules(doc) -> RewriteEngine:
    if isinstance(doc, dict):
        doc = doc.get("rules", [])
    if not isinstance(doc, list):
        raise RuleError("rule document must be a list or {'rules': [...]}")
    rules = []
    for i, entry in enumerate(doc):
        extra = set(entry) - _RULE_KEYS
        if extra:
            raise RuleError("rule %d: unknown keys %s" % (i, ", ".join(sorted(extra))))
        if "action" not in entry:
            raise RuleError("rule %d: missing action" % i)
        try:
            direction = Direction(entry.get("direction", "both"))
        except ValueError:
            raise RuleError("rule %d: bad direction %r" % (i, entry.get("direction"))) from None
        rules.append(
            RewriteRule(
                name=str(entry.get("name", "rule%d" % i)),
                action=_compile_action(entry["action"]),
                matcher=_compile_matcher(entry.get("match", {})),
                direction=direction,
                enabled=bool(entry.get("enabled", True)),
            )
        )
    return RewriteEngine(rules)


def load_rules_file(path: str) -> RewriteEngine:
    with open(path, "r", encoding="utf-8") as fh:
        return compile_rules(json.load(fh))


def rules_fingerprint(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]
