"""Dialogue acts, ontologies, (de)lexicalisation and the DA feature encoding."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

INFORMABLE = "informable"
REQUESTABLE = "requestable"
BINARY = "binary"
SLOT_CLASSES = (INFORMABLE, REQUESTABLE, BINARY)
CLASS_PREFIX = {INFORMABLE: "I", REQUESTABLE: "R", BINARY: "B"}
PREFIX_CLASS = {v: k for k, v in CLASS_PREFIX.items()}

DONTCARE = "dontcare"
YES = "yes"
NO = "no"
SPECIAL_VALUES = frozenset({DONTCARE, YES, NO})

_SLOT_TOKEN_RE = re.compile(r"^<([IRB])\.([^<>\s]+)>$")
_TOKEN_RE = re.compile(r"<[IRB]\.[^<>\s]+>|\w+(?:[-'.]\w+)*|[^\w\s]")


class DialogueActError(ValueError):
    pass


class DelexicalisationError(DialogueActError):
    pass


class MissingValueError(DelexicalisationError):
    def __init__(self, slot: str, value: str):
        super().__init__(f"value {value!r} of slot {slot!r} not found in text")
        self.slot = slot
        self.value = value


class OverlapError(DelexicalisationError):
    def __init__(self, slot: str, value: str):
        super().__init__(f"every occurrence of {value!r} (slot {slot!r}) overlaps another slot value")
        self.slot = slot
        self.value = value


class UnboundSlotError(DialogueActError):
    def __init__(self, token: str):
        super().__init__(f"slot token {token} has no value in the dialogue act")
        self.token = token


class EncodingError(DialogueActError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split off punctuation; slot tokens stay atomic."""
    out = []
    for tok in _TOKEN_RE.findall(text):
        out.append(tok if _SLOT_TOKEN_RE.match(tok) else tok.lower())
    return out


def slot_token(slot: str, slot_cls: str) -> str:
    return f"<{CLASS_PREFIX[slot_cls]}.{slot}>"


def is_slot_token(token: str) -> bool:
    return _SLOT_TOKEN_RE.match(token) is not None


def parse_slot_token(token: str) -> tuple[str, str]:
    """'<I.family>' -> ('informable', 'family')."""
    m = _SLOT_TOKEN_RE.match(token)
    if m is None:
        raise ValueError(f"not a slot token: {token!r}")
    return PREFIX_CLASS[m.group(1)], m.group(2)


def is_literal(value: str | None) -> bool:
    return value is not None and value not in SPECIAL_VALUES


@dataclass(frozen=True)
class SlotDef:
    name: str
    cls: str

    def __post_init__(self):
        if self.cls not in SLOT_CLASSES:
            raise DialogueActError(f"slot {self.name!r}: unknown class {self.cls!r}")


@dataclass(frozen=True)
class Ontology:
    domain: str
    act_types: tuple[str, ...]
    slots: tuple[SlotDef, ...]
    _by_name: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "act_types", tuple(self.act_types))
        object.__setattr__(self, "slots", tuple(self.slots))
        by_name = {}
        for s in self.slots:
            if s.name in by_name:
                raise DialogueActError(f"duplicate slot {s.name!r} in domain {self.domain!r}")
            by_name[s.name] = s
        if len(set(self.act_types)) != len(self.act_types):
            raise DialogueActError(f"duplicate act type in domain {self.domain!r}")
        object.__setattr__(self, "_by_name", by_name)

    def __contains__(self, slot: str) -> bool:
        return slot in self._by_name

    def slot_class(self, slot: str) -> str:
        try:
            return self._by_name[slot].cls
        except KeyError:
            raise DialogueActError(f"slot {slot!r} not in ontology {self.domain!r}") from None

    def slots_of_class(self, slot_cls: str) -> list[str]:
        return [s.name for s in self.slots if s.cls == slot_cls]

    def slot_tokens(self) -> list[str]:
        """Closed vocabulary of slot tokens (binary slots are never delexicalised)."""
        return [slot_token(s.name, s.cls) for s in self.slots if s.cls != BINARY]

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "act_types": list(self.act_types),
            "slots": [{"name": s.name, "class": s.cls} for s in self.slots],
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Ontology":
        try:
            return cls(
                domain=obj["domain"],
                act_types=tuple(obj["act_types"]),
                slots=tuple(SlotDef(s["name"], s["class"]) for s in obj["slots"]),
            )
        except (KeyError, TypeError) as exc:
            raise DialogueActError(f"malformed ontology: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Ontology":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def union(cls, *onts: "Ontology", domain: str | None = None) -> "Ontology":
        acts: list[str] = []
        slots: dict[str, SlotDef] = {}
        for ont in onts:
            for a in ont.act_types:
                if a not in acts:
                    acts.append(a)
            for s in ont.slots:
                if s.name in slots and slots[s.name].cls != s.cls:
                    raise DialogueActError(
                        f"slot {s.name!r} has class {slots[s.name].cls} and {s.cls}")
                slots.setdefault(s.name, s)
        name = domain or "+".join(o.domain for o in onts)
        return cls(name, tuple(acts), tuple(slots.values()))


def slot_class(slot: str, ont: Ontology) -> str:
    return ont.slot_class(slot)


@dataclass(frozen=True)
class DialogueAct:
    """An act type plus ordered (slot, value) pairs; value None means 'no value'."""

    act_type: str
    slots: tuple[tuple[str, str | None], ...] = ()

    def __post_init__(self):
        slots = tuple((str(s), None if v is None else str(v)) for s, v in self.slots)
        names = [s for s, _ in slots]
        if len(set(names)) != len(names):
            raise DialogueActError(f"repeated slot in {self.act_type}{names}")
        object.__setattr__(self, "slots", slots)

    @property
    def slot_names(self) -> list[str]:
        return [s for s, _ in self.slots]

    def value(self, slot: str) -> str | None:
        for s, v in self.slots:
            if s == slot:
                return v
        raise KeyError(slot)

    def delex_slots(self) -> list[tuple[str, str]]:
        """Slots whose literal value is realised (and delexicalised) in text."""
        return [(s, v) for s, v in self.slots if is_literal(v)]

    def validate(self, ont: Ontology) -> None:
        if self.act_type not in ont.act_types:
            raise DialogueActError(f"act type {self.act_type!r} not in ontology {ont.domain!r}")
        for s, v in self.slots:
            cls = ont.slot_class(s)
            if cls == BINARY and v not in SPECIAL_VALUES:
                raise DialogueActError(f"binary slot {s!r} takes yes/no/dontcare, got {v!r}")
            if cls == REQUESTABLE and v == DONTCARE:
                raise DialogueActError(f"requestable slot {s!r} cannot be 'dontcare'")

    def is_valid(self, ont: Ontology) -> bool:
        try:
            self.validate(ont)
        except DialogueActError:
            return False
        return True

    def to_json(self) -> dict:
        return {"act": self.act_type, "slots": [[s, v] for s, v in self.slots]}

    @classmethod
    def from_json(cls, obj: Mapping) -> "DialogueAct":
        return cls(obj["act"], tuple((s, v) for s, v in obj.get("slots", [])))

    def __str__(self) -> str:
        parts = []
        for s, v in self.slots:
            if v is None:
                parts.append(s)
            elif re.search(r"[;,=()\"\s]", v):
                parts.append(f'{s}="{v}"')
            else:
                parts.append(f"{s}={v}")
        return f"{self.act_type}({';'.join(parts)})"

    @classmethod
    def parse(cls, text: str) -> "DialogueAct":
        """Parse ``inform(name="seven days";pricerange=cheap)``; ',' also separates."""
        m = re.fullmatch(r"\s*([\w-]+)\s*\((.*)\)\s*", text, flags=re.S)
        if m is None:
            raise DialogueActError(f"cannot parse dialogue act {text!r}")
        act, body = m.group(1), m.group(2)
        items, buf, quoted = [], [], False
        for ch in body:
            if ch == '"':
                quoted = not quoted
                buf.append(ch)
            elif ch in ";," and not quoted:
                items.append("".join(buf))
                buf = []
            else:
                buf.append(ch)
        if quoted:
            raise DialogueActError(f"unbalanced quote in {text!r}")
        items.append("".join(buf))
        slots = []
        for item in items:
            item = item.strip()
            if not item:
                continue
            if "=" in item:
                name, value = item.split("=", 1)
                value = value.strip()
                if len(value) >= 2 and value[0] == value[-1] == '"':
                    value = value[1:-1]
                slots.append((name.strip(), value))
            else:
                slots.append((item, None))
        return cls(act, tuple(slots))


@dataclass(frozen=True)
class Instance:
    da: DialogueAct
    raw_text: str
    delex_tokens: tuple[str, ...]
    slot_bindings: dict = field(default_factory=dict, hash=False)

    @classmethod
    def from_text(cls, da: DialogueAct, text: str, ont: Ontology) -> "Instance":
        tokens, bindings = delexicalise(text, da, ont)
        return cls(da, text, tuple(tokens), bindings)

    def lexicalised_tokens(self) -> list[str]:
        return tokenize(lexicalise(self.delex_tokens, self.da))


def delexicalise(raw_text: str, da: DialogueAct, ont: Ontology) -> tuple[list[str], dict[str, str]]:
    """Replace every literal slot value in ``raw_text`` by its slot token.

    Values are matched on token boundaries, case-insensitively, longest
    value first; all non-overlapping occurrences of a value are replaced.
    """
    toks = tokenize(raw_text)
    pairs = []
    for order, (slot, value) in enumerate(da.delex_slots()):
        cls = ont.slot_class(slot)
        if cls == BINARY:
            continue
        vt = tokenize(value)
        pairs.append((len(vt), len(value), -order, slot, cls, value, vt))
    pairs.sort(reverse=True)

    taken = [False] * len(toks)
    starts: dict[int, tuple[int, str]] = {}
    bindings: dict[str, str] = {}
    for *_, slot, cls, value, vt in pairs:
        width = len(vt)
        occ = [i for i in range(len(toks) - width + 1) if width and toks[i:i + width] == vt]
        if not occ:
            raise MissingValueError(slot, value)
        tok = slot_token(slot, cls)
        used = 0
        for i in occ:
            if any(taken[i:i + width]):
                continue
            taken[i:i + width] = [True] * width
            starts[i] = (width, tok)
            used += 1
        if not used:
            raise OverlapError(slot, value)
        bindings[tok] = value

    out, i = [], 0
    while i < len(toks):
        if i in starts:
            width, tok = starts[i]
            out.append(tok)
            i += width
        else:
            out.append(toks[i])
            i += 1
    return out, bindings


def lexicalise(delex_tokens: Sequence[str], da: DialogueAct, strict: bool = True) -> str:
    """Substitute slot tokens with the dialogue act's values.

    With ``strict=False`` unbound slot tokens are left in place (used when
    scoring model output that may contain spurious slots).
    """
    values = dict(da.delex_slots())
    out = []
    for tok in delex_tokens:
        if is_slot_token(tok):
            _, slot = parse_slot_token(tok)
            if slot in values:
                out.append(values[slot])
            elif strict:
                raise UnboundSlotError(tok)
            else:
                out.append(tok)
        else:
            out.append(tok)
    return " ".join(out)


def value_kind(value: str | None, slot_cls: str) -> str:
    if slot_cls == BINARY:
        if value not in SPECIAL_VALUES:
            raise EncodingError(f"binary slot value must be yes/no/dontcare, got {value!r}")
        return value
    if value == DONTCARE:
        if slot_cls == REQUESTABLE:
            raise EncodingError("requestable slots cannot take 'dontcare'")
        return DONTCARE
    return "value"


_KINDS = {INFORMABLE: ("value", DONTCARE), REQUESTABLE: ("value",), BINARY: (YES, NO, DONTCARE)}


class DAFeatureSpace:
    """Coordinate system of the 1-hot DA vector: one block for acts, one feature per (slot, kind)."""

    def __init__(self, act_types: Iterable[str], slots: Iterable[tuple[str, str]]):
        self.act_types = tuple(act_types)
        self.slots = tuple((name, cls) for name, cls in slots)
        self.act_index = {a: i for i, a in enumerate(self.act_types)}
        if len(self.act_index) != len(self.act_types):
            raise EncodingError("duplicate act type")
        self.slot_cls = dict(self.slots)
        if len(self.slot_cls) != len(self.slots):
            raise EncodingError("duplicate slot")
        self.feature_index: dict[tuple[str, str], int] = {}
        idx = len(self.act_types)
        for name, cls in self.slots:
            for kind in _KINDS[cls]:
                self.feature_index[(name, kind)] = idx
                idx += 1
        self.dim = idx
        self._names = list(self.act_types) + [f"{s}={k}" for (s, k) in self.feature_index]

    @classmethod
    def from_ontology(cls, *onts: Ontology) -> "DAFeatureSpace":
        ont = Ontology.union(*onts) if len(onts) > 1 else onts[0]
        return cls(ont.act_types, [(s.name, s.cls) for s in ont.slots])

    def feature_names(self) -> list[str]:
        return list(self._names)

    def encode(self, da: DialogueAct) -> np.ndarray:
        vec = np.zeros(self.dim)
        try:
            vec[self.act_index[da.act_type]] = 1.0
        except KeyError:
            raise EncodingError(f"unknown act type {da.act_type!r}") from None
        for slot, value in da.slots:
            if slot not in self.slot_cls:
                raise EncodingError(f"unknown slot {slot!r}")
            vec[self.feature_index[(slot, value_kind(value, self.slot_cls[slot]))]] = 1.0
        return vec

    def decode(self, vec: np.ndarray) -> tuple[str, frozenset[tuple[str, str]]]:
        """Recover (act type, {(slot, kind)}) from a binary DA vector."""
        vec = np.asarray(vec)
        acts = [a for a, i in self.act_index.items() if vec[i] > 0.5]
        if len(acts) != 1:
            raise EncodingError(f"expected exactly one active act feature, found {len(acts)}")
        present = frozenset(key for key, i in self.feature_index.items() if vec[i] > 0.5)
        return acts[0], present

    def to_dict(self) -> dict:
        return {"act_types": list(self.act_types), "slots": [list(s) for s in self.slots]}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "DAFeatureSpace":
        return cls(obj["act_types"], [tuple(s) for s in obj["slots"]])

    def __eq__(self, other) -> bool:
        return isinstance(other, DAFeatureSpace) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"DAFeatureSpace(acts={len(self.act_types)}, slots={len(self.slots)}, dim={self.dim})"


def encode_da(da: DialogueAct, space: DAFeatureSpace) -> np.ndarray:
    return space.encode(da)
