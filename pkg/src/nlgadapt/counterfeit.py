"""Synthesise pseudo target-domain data by class-preserving slot renaming."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dialogue_act import (BINARY, SLOT_CLASSES, DialogueAct, DialogueActError, Instance,
                           Ontology, is_literal, is_slot_token, lexicalise, parse_slot_token,
                           slot_token)


class CounterfeitError(ValueError):
    pass


class EmptyClassError(CounterfeitError):
    def __init__(self, slot_cls: str, domain: str):
        super().__init__(f"target ontology {domain!r} has no {slot_cls} slots")
        self.slot_cls = slot_cls


@dataclass(frozen=True)
class CounterfeitPlan:
    source: Ontology
    target: Ontology
    candidates: dict          # class -> tuple of target slot names
    distinct: bool = False    # injective renaming within an instance

    @classmethod
    def build(cls, source: Ontology, target: Ontology, distinct: bool = False) -> "CounterfeitPlan":
        cands = {c: tuple(target.slots_of_class(c)) for c in SLOT_CLASSES}
        return cls(source, target, cands, distinct)

    def choices(self, slot: str) -> tuple[str, ...]:
        cls = self.source.slot_class(slot)
        opts = self.candidates.get(cls, ())
        if not opts:
            raise EmptyClassError(cls, self.target.domain)
        return opts


def _rename_map(da: DialogueAct, plan: CounterfeitPlan, rng: np.random.Generator) -> dict[str, str]:
    mapping: dict[str, str] = {}
    used: set[str] = set()
    for slot in da.slot_names:
        opts = plan.choices(slot)
        if plan.distinct:
            opts = tuple(s for s in opts if s not in used)
            if not opts:
                raise CounterfeitError(
                    f"not enough {plan.source.slot_class(slot)} slots in "
                    f"{plan.target.domain!r} for injective renaming of {da}")
        choice = opts[int(rng.integers(len(opts)))]
        mapping[slot] = choice
        used.add(choice)
    return mapping


def counterfeit_instance(inst: Instance, plan: CounterfeitPlan, rng: np.random.Generator) -> Instance:
    """Rename every slot of a delexicalised instance to a random target slot of the same class.

    The same source slot maps to the same target slot in the DA and in the
    text. Non-slot tokens and the act type are untouched. When two source
    slots land on one target slot they merge in the DA (a literal value wins
    over dontcare/none).
    """
    da = inst.da
    text_slots = [parse_slot_token(t)[1] for t in inst.delex_tokens if is_slot_token(t)]
    valued = {s for s, v in da.slots if is_literal(v) and plan.source.slot_class(s) != BINARY}
    if set(text_slots) != valued:
        raise CounterfeitError(
            f"slot tokens {sorted(set(text_slots))} disagree with DA slots {sorted(valued)}")
    if da.act_type not in plan.target.act_types:
        raise CounterfeitError(f"act type {da.act_type!r} not in target ontology")

    mapping = _rename_map(da, plan, rng)
    new_slots: dict[str, str | None] = {}
    for slot, value in da.slots:
        new = mapping[slot]
        if new not in new_slots or (is_literal(value) and not is_literal(new_slots[new])):
            new_slots[new] = value
    new_da = DialogueAct(da.act_type, tuple(new_slots.items()))

    tokens = []
    for tok in inst.delex_tokens:
        if is_slot_token(tok):
            cls, slot = parse_slot_token(tok)
            tokens.append(slot_token(mapping[slot], cls))
        else:
            tokens.append(tok)
    bindings = {slot_token(s, plan.target.slot_class(s)): v for s, v in new_da.delex_slots()
                if plan.target.slot_class(s) != BINARY}
    raw = lexicalise(tokens, new_da)
    return Instance(new_da, raw, tuple(tokens), bindings)


def counterfeit_corpus(src: Sequence[Instance], plan: CounterfeitPlan,
                       rng: np.random.Generator | int) -> list[Instance]:
    """One pseudo instance per source instance, order preserved.

    An integer seed gives every instance its own RNG stream (seed, index), so
    the result does not depend on how the corpus is chunked.
    """
    if isinstance(rng, (int, np.integer)):
        return [counterfeit_instance(x, plan, np.random.default_rng([int(rng), i]))
                for i, x in enumerate(src)]
    return [counterfeit_instance(x, plan, rng) for x in src]


def validate_instance(inst: Instance, ont: Ontology) -> None:
    """Raise unless the DA is valid under ``ont`` and the text's slot tokens match it."""
    inst.da.validate(ont)
    for tok in inst.delex_tokens:
        if is_slot_token(tok):
            cls, slot = parse_slot_token(tok)
            if slot not in ont or ont.slot_class(slot) != cls:
                raise DialogueActError(f"slot token {tok} not valid in {ont.domain!r}")
