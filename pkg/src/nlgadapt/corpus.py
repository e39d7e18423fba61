"""Corpus/ontology I/O and a template-based synthetic two-domain corpus.

The synthetic domains imitate a laptop -> television adaptation pair: the
same act types and slot classes, disjoint slot names, and realisations
produced from one shared template grammar (``overlap`` controls how much of
the carrier wording the target domain shares with the source).
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dialogue_act import (BINARY, DONTCARE, INFORMABLE, NO, REQUESTABLE, YES,
                           DialogueAct, DialogueActError, Instance, Ontology, SlotDef,
                           delexicalise, slot_token, tokenize)


class ParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = str(path)
        self.line = line


def instance_to_json(inst: Instance) -> dict:
    return {"da": inst.da.to_json(), "text": inst.raw_text}


def save_corpus(instances: Iterable[Instance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_json(inst), ensure_ascii=False) + "\n")


def load_corpus(path: str | Path, ont: Ontology) -> list[Instance]:
    """Read a JSONL corpus, validating every DA against ``ont`` and delexicalising."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                da = DialogueAct.from_json(obj["da"])
                text = obj["text"]
                if not isinstance(text, str):
                    raise TypeError("'text' must be a string")
                da.validate(ont)
                out.append(Instance.from_text(da, text, ont))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(path, lineno, f"{type(exc).__name__}: {exc}") from exc
    return out


# --------------------------------------------------------------------------
# synthetic corpora

@dataclass
class SlotSpec:
    name: str
    cls: str
    noun: str = ""                 # surface name of the slot
    values: list[str] = field(default_factory=list)
    yes: str = ""                  # binary realisations
    no: str = ""


@dataclass
class DomainSpec:
    name: str
    nouns: list[str]               # domain nouns, e.g. ["laptop", "computer"]
    slots: list[SlotSpec]

    def ontology(self, act_types: Sequence[str]) -> Ontology:
        return Ontology(self.name, tuple(act_types), tuple(SlotDef(s.name, s.cls) for s in self.slots))


# Carrier frames per act. "{X}" is the domain noun, "{P}" the joined slot phrases.
SHARED_FRAMES = {
    "inform": ["there is a {X} {P} .", "i found a {X} {P} ."],
    "recommend": ["i would recommend a {X} {P} .", "how about a {X} {P} ?"],
    "inform_no_match": ["there is no {X} {P} .", "sorry , i can not find a {X} {P} ."],
    "confirm": ["do you want a {X} {P} ?", "let me confirm , you want a {X} {P} ?"],
    "request": ["what {N} would you like ?", "do you have a preference for {N} ?"],
    "goodbye": ["thank you for using our service , goodbye .", "goodbye ."],
}
# alternative wording used by the target domain when it does not share a frame
ALT_FRAMES = {
    "inform": ["we have a {X} {P} .", "a {X} {P} is available ."],
    "recommend": ["my suggestion is a {X} {P} .", "you might like a {X} {P} ."],
    "inform_no_match": ["no {X} matches {P} .", "unfortunately no {X} {P} exists ."],
    "confirm": ["so you need a {X} {P} ?", "just to check , a {X} {P} ?"],
    "request": ["which {N} do you need ?", "please tell me the {N} you prefer ."],
    "goodbye": ["bye , have a nice day .", "see you later ."],
}
PHRASES = {
    (INFORMABLE, "value"): ["with {T} {N}", "whose {N} is {T}"],
    (INFORMABLE, DONTCARE): ["with any {N}", "if the {N} does not matter"],
    (REQUESTABLE, "value"): ["with a {N} of {T}", "that has {T} as {N}"],
}
ACT_TYPES = ("inform", "recommend", "inform_no_match", "confirm", "request", "goodbye")
# relative frequency of each act when a corpus is subsampled
ACT_WEIGHTS = {"inform": 1.0, "recommend": 1.0, "inform_no_match": 1.0, "confirm": 1.0,
               "request": 0.4, "goodbye": 0.2}


def _laptop() -> DomainSpec:
    I, R, B = INFORMABLE, REQUESTABLE, BINARY
    return DomainSpec("laptop", ["laptop", "computer"], [
        SlotSpec("family", I, "product family", ["satellite", "tecra", "portege"]),
        SlotSpec("pricerange", I, "price range", ["budget", "moderate", "expensive"]),
        SlotSpec("batteryrating", I, "battery rating", ["exceptional", "standard", "poor"]),
        SlotSpec("driverange", I, "drive range", ["small", "medium", "large"]),
        SlotSpec("weightrange", I, "weight range", ["light weight", "mid weight", "heavy"]),
        SlotSpec("isforbusinesscomputing", B, yes="for business computing",
                 no="not for business computing"),
        SlotSpec("name", R, "name", ["satellite pro", "tecra m11", "portege z30"]),
        SlotSpec("price", R, "price", ["499 euros", "899 euros", "1299 euros"]),
        SlotSpec("warranty", R, "warranty", ["one year", "two years"]),
        SlotSpec("battery", R, "battery", ["4 hours", "9 hours"]),
        SlotSpec("memory", R, "memory", ["4 gb", "8 gb", "16 gb"]),
        SlotSpec("drive", R, "drive", ["256 gb ssd", "1 tb hdd"]),
        SlotSpec("processor", R, "processor", ["intel i5", "intel i7"]),
        SlotSpec("weight", R, "weight", ["1.2 kg", "2.4 kg"]),
        SlotSpec("platform", R, "platform", ["windows 10", "windows 8"]),
    ])


def _television() -> DomainSpec:
    I, R, B = INFORMABLE, REQUESTABLE, BINARY
    return DomainSpec("tv", ["television", "tv"], [
        SlotSpec("series", I, "series", ["bravia", "viera", "aquos"]),
        SlotSpec("pricetier", I, "price tier", ["affordable", "mid tier", "premium"]),
        SlotSpec("screensizerange", I, "screen size range", ["compact", "regular", "huge"]),
        SlotSpec("ecorating", I, "eco rating", ["a plus", "b grade", "c grade"]),
        SlotSpec("hdmiport", I, "number of hdmi ports", ["two", "three", "four"]),
        SlotSpec("hasusbport", B, yes="with a usb port", no="without a usb port"),
        SlotSpec("model", R, "model", ["kdl 40", "tx 50", "lc 60"]),
        SlotSpec("cost", R, "cost", ["399 dollars", "699 dollars", "999 dollars"]),
        SlotSpec("resolution", R, "resolution", ["1080p", "4k"]),
        SlotSpec("powerconsumption", R, "power consumption", ["80 watts", "120 watts"]),
        SlotSpec("accessories", R, "accessories", ["remote control", "wall mount"]),
        SlotSpec("color", R, "color", ["black", "silver"]),
        SlotSpec("screensize", R, "screen size", ["40 inch", "55 inch"]),
        SlotSpec("audio", R, "audio", ["dolby sound", "stereo speakers"]),
        SlotSpec("warrantyperiod", R, "warranty period", ["12 months", "24 months"]),
    ])


@dataclass
class SynthSpec:
    source: DomainSpec = field(default_factory=_laptop)
    target: DomainSpec = field(default_factory=_television)
    act_types: tuple[str, ...] = ACT_TYPES
    frames: dict = field(default_factory=lambda: dict(SHARED_FRAMES))
    alt_frames: dict = field(default_factory=lambda: dict(ALT_FRAMES))
    phrases: dict = field(default_factory=lambda: dict(PHRASES))
    max_slots: int = 3
    source_size: int | None = 2500
    target_size: int | None = 1500
    overlap: float = 1.0           # probability a target realisation uses the shared frames
    enumerate_values: bool = False  # expand every value combination instead of sampling one
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phrases"] = {f"{c}:{k}": v for (c, k), v in self.phrases.items()}
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthSpec":
        obj = dict(obj)
        for key in ("source", "target"):
            if key in obj:
                dom = obj[key]
                obj[key] = DomainSpec(dom["name"], list(dom["nouns"]),
                                      [SlotSpec(**s) for s in dom["slots"]])
        if "phrases" in obj:
            obj["phrases"] = {tuple(k.split(":", 1)): v for k, v in obj["phrases"].items()}
        if "act_types" in obj:
            obj["act_types"] = tuple(obj["act_types"])
        return cls(**obj)


def _slot_kinds(slot: SlotSpec, act: str) -> list[str]:
    if act == "request":
        return ["none"] if slot.cls == INFORMABLE else []
    if slot.cls == BINARY:
        return [YES, NO]
    if slot.cls == INFORMABLE:
        return ["value", DONTCARE]
    return [] if act == "confirm" else ["value"]


def enumerate_structures(dom: DomainSpec, act_types: Sequence[str], max_slots: int
                         ) -> list[tuple[str, tuple[tuple[int, str], ...]]]:
    """All (act, ((slot index, kind), ...)) combinations the grammar can realise."""
    out = []
    for act in act_types:
        if act == "goodbye":
            out.append((act, ()))
            continue
        sizes = [1] if act == "request" else range(1, max_slots + 1)
        for k in sizes:
            for combo in itertools.combinations(range(len(dom.slots)), k):
                kinds = [_slot_kinds(dom.slots[i], act) for i in combo]
                for choice in itertools.product(*kinds):
                    out.append((act, tuple(zip(combo, choice))))
    return out


def _join(phrases: list[str]) -> str:
    if len(phrases) <= 1:
        return "".join(phrases)
    return " , ".join(phrases[:-1]) + " and " + phrases[-1]


def realise(dom: DomainSpec, act: str, slots: Sequence[tuple[SlotSpec, str, str | None]],
            frames: dict, phrases: dict, rng: np.random.Generator) -> tuple[DialogueAct, str]:
    """Build (DA, surface text) for one structure with chosen values."""
    da_slots = []
    parts = []
    for spec, kind, value in slots:
        if kind == "none":
            da_slots.append((spec.name, None))
            continue
        if spec.cls == BINARY:
            da_slots.append((spec.name, kind))
            parts.append(spec.yes if kind == YES else spec.no)
            continue
        options = phrases[(spec.cls, kind)]
        tmpl = options[int(rng.integers(len(options)))]
        da_slots.append((spec.name, DONTCARE if kind == DONTCARE else value))
        parts.append(tmpl.replace("{N}", spec.noun).replace("{T}", value or ""))
    options = frames[act]
    frame = options[int(rng.integers(len(options)))]
    noun = dom.nouns[int(rng.integers(len(dom.nouns)))]
    slot_noun = slots[0][0].noun if slots else ""
    text = frame.replace("{X}", noun).replace("{P}", _join(parts)).replace("{N}", slot_noun)
    return DialogueAct(act, tuple(da_slots)), text


def _generate_domain(dom: DomainSpec, spec: SynthSpec, size: int | None, use_alt: float,
                     rng: np.random.Generator) -> list[Instance]:
    missing = [a for a in spec.act_types if a not in spec.frames]
    if missing:
        raise ValueError(f"no templates for act types {missing}")
    ont = dom.ontology(spec.act_types)
    structures = enumerate_structures(dom, spec.act_types, spec.max_slots)
    jobs = []
    for act, combo in structures:
        slot_specs = [(dom.slots[i], kind) for i, kind in combo]
        needs_value = [s.values if k == "value" else [None] for s, k in slot_specs]
        if spec.enumerate_values:
            for values in itertools.product(*needs_value):
                jobs.append((act, slot_specs, values))
        else:
            jobs.append((act, slot_specs, None))
    if size is not None and size < len(jobs):
        jobs = [jobs[i] for i in _stratified(jobs, size, rng)]
    out = []
    for act, slot_specs, values in jobs:
        if values is None:
            values = [s.values[int(rng.integers(len(s.values)))] if k == "value" else None
                      for s, k in slot_specs]
        frames = spec.frames
        if use_alt > 0 and rng.random() < use_alt and act in spec.alt_frames:
            frames = spec.alt_frames
        da, text = realise(dom, act, [(s, k, v) for (s, k), v in zip(slot_specs, values)],
                           frames, spec.phrases, rng)
        out.append(Instance.from_text(da, text, ont))
    return out


def _stratified(jobs: list, size: int, rng: np.random.Generator) -> np.ndarray:
    """Pick ``size`` job indices: act by ACT_WEIGHTS, then slot count uniformly,
    then a structure uniformly within that bucket (with replacement)."""
    buckets: dict[str, dict[int, list[int]]] = {}
    for i, (act, slot_specs, _) in enumerate(jobs):
        buckets.setdefault(act, {}).setdefault(len(slot_specs), []).append(i)
    acts = sorted(buckets)
    w = np.array([ACT_WEIGHTS.get(a, 1.0) for a in acts])
    picks = []
    for a in rng.choice(len(acts), size=size, p=w / w.sum()):
        by_k = buckets[acts[a]]
        ks = sorted(by_k)
        idx = by_k[ks[int(rng.integers(len(ks)))]]
        picks.append(idx[int(rng.integers(len(idx)))])
    return np.array(picks)


@dataclass
class SynthCorpus:
    source: list[Instance]
    target: list[Instance]
    source_ont: Ontology
    target_ont: Ontology

    def write(self, outdir: str | Path) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "source_ont": outdir / f"{self.source_ont.domain}.ontology.json",
            "target_ont": outdir / f"{self.target_ont.domain}.ontology.json",
            "source": outdir / f"{self.source_ont.domain}.jsonl",
            "target": outdir / f"{self.target_ont.domain}.jsonl",
        }
        self.source_ont.save(paths["source_ont"])
        self.target_ont.save(paths["target_ont"])
        save_corpus(self.source, paths["source"])
        save_corpus(self.target, paths["target"])
        return paths


def generate_synthetic(spec: SynthSpec | None = None) -> SynthCorpus:
    spec = spec or SynthSpec()
    ss = np.random.SeedSequence(spec.seed)
    src_rng, tgt_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    source = _generate_domain(spec.source, spec, spec.source_size, 0.0, src_rng)
    target = _generate_domain(spec.target, spec, spec.target_size, 1.0 - spec.overlap, tgt_rng)
    return SynthCorpus(source, target, spec.source.ontology(spec.act_types),
                       spec.target.ontology(spec.act_types))


def similar_domains(seed: int = 0, **kw) -> SynthSpec:
    """Shared carrier grammar (the laptop -> TV style setting)."""
    return SynthSpec(seed=seed, overlap=1.0, **kw)


def disjoint_domains(seed: int = 0, **kw) -> SynthSpec:
    """Target wording mostly differs from the source."""
    return SynthSpec(seed=seed, overlap=0.3, **kw)
