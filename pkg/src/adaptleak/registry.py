"""Adaptation registry files.

A registry maps the context sources an adaptive app reads to the settings
(actions) it writes.  The on-disk format is a strict XML subset::

    <registry>
      <adaptation id="0">
        <context><method>GPS</method></context>
        <action><method>RingerMode</method><method>AlarmVolume</method></action>
      </adaptation>
    </registry>

Only the ``id`` attribute is accepted (on ``adaptation``); it may be omitted,
in which case rules are numbered in document order.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContextActionOverlap,
    DuplicateActionAcrossRules,
    EmptyActionList,
    EmptyContextList,
    MalformedDocument,
    TooManyActions,
)

METHOD_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
DEFAULT_MAX_ACTIONS = 16


@dataclass(frozen=True)
class AdaptationRule:
    rule_id: int
    contexts: tuple[str, ...]
    actions: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "contexts", tuple(self.contexts))
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.contexts:
            raise EmptyContextList(f"adaptation {self.rule_id} has no context methods")
        if not self.actions:
            raise EmptyActionList(f"adaptation {self.rule_id} has no action methods")
        for name in self.contexts + self.actions:
            if not METHOD_RE.match(name):
                raise MalformedDocument(f"invalid method name {name!r}")
        for group, names in (("context", self.contexts), ("action", self.actions)):
            if len(set(names)) != len(names):
                raise MalformedDocument(f"adaptation {self.rule_id}: repeated {group} method")
        overlap = set(self.contexts) & set(self.actions)
        if overlap:
            raise ContextActionOverlap(
                f"adaptation {self.rule_id}: {sorted(overlap)} listed as both context and action"
            )


@dataclass(frozen=True)
class Registry:
    rules: tuple[AdaptationRule, ...]

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        ids = [r.rule_id for r in self.rules]
        if ids != list(range(len(ids))):
            raise MalformedDocument(f"rule ids must be dense from 0 in order, got {ids}")
        owner: dict[str, int] = {}
        for rule in self.rules:
            for a in rule.actions:
                if a in owner:
                    raise DuplicateActionAcrossRules(
                        f"action {a!r} appears in adaptations {owner[a]} and {rule.rule_id}"
                    )
                owner[a] = rule.rule_id

    def rule(self, rule_id: int) -> AdaptationRule:
        return self.rules[rule_id]

    def owner_of(self, action: str) -> int | None:
        for rule in self.rules:
            if action in rule.actions:
                return rule.rule_id
        return None

    @property
    def actions(self) -> tuple[str, ...]:
        """All action ids, in rule then document order."""
        return tuple(a for r in self.rules for a in r.actions)

    def to_dict(self) -> dict:
        return {
            "rules": [
                {"id": r.rule_id, "contexts": list(r.contexts), "actions": list(r.actions)}
                for r in self.rules
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Registry":
        try:
            rules = [
                AdaptationRule(int(r.get("id", i)), tuple(r["contexts"]), tuple(r["actions"]))
                for i, r in enumerate(d["rules"])
            ]
        except (KeyError, TypeError) as exc:
            raise MalformedDocument(f"bad registry object: {exc}") from exc
        return cls(tuple(rules))


def _text_is_blank(text: str | None) -> bool:
    return text is None or not text.strip()


def _methods(elem: ET.Element, where: str) -> list[str]:
    if elem.attrib:
        raise MalformedDocument(f"<{elem.tag}> takes no attributes ({where})")
    if not _text_is_blank(elem.text):
        raise MalformedDocument(f"stray text inside <{elem.tag}> ({where})")
    names = []
    for m in elem:
        if m.tag != "method":
            raise MalformedDocument(f"unexpected <{m.tag}> inside <{elem.tag}> ({where})")
        if m.attrib or len(m):
            raise MalformedDocument(f"<method> must be a plain text element ({where})")
        if not _text_is_blank(m.tail):
            raise MalformedDocument(f"stray text after <method> ({where})")
        name = (m.text or "").strip()
        if not METHOD_RE.match(name):
            raise MalformedDocument(f"invalid method name {name!r} ({where})")
        names.append(name)
    return names


def parse_registry(text: str) -> Registry:
    """Parse registry-file text into a validated :class:`Registry`."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedDocument(f"not well-formed: {exc}") from exc
    if root.tag != "registry" or root.attrib:
        raise MalformedDocument("root element must be a bare <registry>")
    if not _text_is_blank(root.text):
        raise MalformedDocument("stray text inside <registry>")

    rules: list[AdaptationRule] = []
    for pos, ad in enumerate(root):
        if ad.tag != "adaptation":
            raise MalformedDocument(f"unexpected <{ad.tag}> under <registry>")
        extra = set(ad.attrib) - {"id"}
        if extra:
            raise MalformedDocument(f"unsupported attribute(s) {sorted(extra)} on <adaptation>")
        if "id" in ad.attrib:
            raw = ad.attrib["id"].strip()
            if not raw.isdigit():
                raise MalformedDocument(f"adaptation id {raw!r} is not a non-negative integer")
            rule_id = int(raw)
        else:
            rule_id = pos
        if not _text_is_blank(ad.text) or not _text_is_blank(ad.tail):
            raise MalformedDocument(f"stray text around adaptation {rule_id}")
        children = list(ad)
        if [c.tag for c in children] != ["context", "action"]:
            raise MalformedDocument(
                f"adaptation {rule_id} must contain exactly <context> then <action>"
            )
        for c in children:
            if not _text_is_blank(c.tail):
                raise MalformedDocument(f"stray text in adaptation {rule_id}")
        where = f"adaptation {rule_id}"
        contexts = _methods(children[0], where)
        actions = _methods(children[1], where)
        rules.append(AdaptationRule(rule_id, tuple(contexts), tuple(actions)))
    if not rules:
        raise MalformedDocument("registry holds no adaptation")
    return Registry(tuple(rules))


def serialize_registry(reg: Registry) -> str:
    lines = ["<registry>"]
    for r in reg.rules:
        lines.append(f'  <adaptation id="{r.rule_id}">')
        lines.append("    <context>")
        lines.extend(f"      <method>{m}</method>" for m in r.contexts)
        lines.append("    </context>")
        lines.append("    <action>")
        lines.extend(f"      <method>{m}</method>" for m in r.actions)
        lines.append("    </action>")
        lines.append("  </adaptation>")
    lines.append("</registry>")
    return "\n".join(lines) + "\n"


def build_protection_lists(reg: Registry) -> dict[int, frozenset[str]]:
    """One monitored-getter set per rule; each equals that rule's action set."""
    return {r.rule_id: frozenset(r.actions) for r in reg.rules}


@dataclass
class MITable:
    """Normalized MI for every non-empty subset of one rule's actions.

    ``values[mask]`` holds the score for the subset encoded by ``mask``, where
    bit ``i`` selects ``actions[i]``.  Index 0 (the empty set) is kept at 0.
    """

    rule_id: int
    actions: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.values) - 1

    def mask_of(self, names) -> int:
        mask = 0
        for n in names:
            mask |= 1 << self.actions.index(n)
        return mask

    def names_of(self, mask: int) -> list[str]:
        return sorted(a for i, a in enumerate(self.actions) if mask >> i & 1)

    def __getitem__(self, mask: int) -> float:
        return float(self.values[mask])


def init_mi_tables(reg: Registry, max_actions_per_rule: int = DEFAULT_MAX_ACTIONS) -> dict[int, MITable]:
    tables = {}
    for r in reg.rules:
        n = len(r.actions)
        if n > max_actions_per_rule:
            raise TooManyActions(
                f"adaptation {r.rule_id} has {n} actions; subset table capped at "
                f"2^{max_actions_per_rule}-1 rows"
            )
        tables[r.rule_id] = MITable(r.rule_id, r.actions, np.zeros(1 << n))
    return tables


EXAMPLE_REGISTRY = """\
<registry>
  <adaptation id="0">
    <context>
      <method>GPS</method>
    </context>
    <action>
      <method>RingerMode</method>
      <method>AlarmVolume</method>
    </action>
  </adaptation>
  <adaptation id="1">
    <context>
      <method>Battery</method>
      <method>GPS</method>
      <method>Transportation</method>
    </context>
    <action>
      <method>CameraFocusMode</method>
      <method>CameraFlashMode</method>
      <method>CameraResolution</method>
    </action>
  </adaptation>
</registry>
"""
