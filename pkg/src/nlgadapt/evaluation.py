"""Corpus BLEU-4, slot error rate, data splits and whole-model evaluation."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence, TypeVar

import numpy as np

from .decoder import RerankConfig, error_rate, rerank, slot_errors, n_da_slots
from .dialogue_act import DialogueAct, Instance
from .sclstm import Generator

T = TypeVar("T")


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def clipped_counts(hyp: Sequence[str], refs: Sequence[Sequence[str]], n: int) -> tuple[int, int]:
    """(clipped matches, total hypothesis n-grams) for order ``n``."""
    counts = ngrams(hyp, n)
    if not counts:
        return 0, 0
    max_ref: Counter = Counter()
    for ref in refs:
        for g, c in ngrams(ref, n).items():
            if c > max_ref[g]:
                max_ref[g] = c
    matched = sum(min(c, max_ref[g]) for g, c in counts.items())
    return matched, sum(counts.values())


def modified_precision(hyp: Sequence[str], refs: Sequence[Sequence[str]], n: int) -> float:
    matched, total = clipped_counts(hyp, refs, n)
    return matched / total if total else 0.0


def closest_ref_length(hyp_len: int, refs: Sequence[Sequence[str]]) -> int:
    # ties go to the shorter reference
    return min((len(r) for r in refs), key=lambda L: (abs(L - hyp_len), L))


def brevity_penalty(c: int, r: int) -> float:
    if c == 0:
        return 0.0
    return 1.0 if c > r else math.exp(1.0 - r / c)


def corpus_bleu4(hyps: Sequence[Sequence[str]], refs: Sequence[Sequence[Sequence[str]]],
                 max_n: int = 4) -> float:
    """Corpus BLEU with n-gram statistics pooled over all hypotheses, no smoothing."""
    if not hyps:
        raise ValueError("empty corpus")
    if len(hyps) != len(refs):
        raise ValueError("need one reference set per hypothesis")
    matched = [0] * max_n
    total = [0] * max_n
    c = r = 0
    for hyp, ref_set in zip(hyps, refs):
        if not ref_set:
            raise ValueError("empty reference set")
        for n in range(1, max_n + 1):
            m, t = clipped_counts(hyp, ref_set, n)
            matched[n - 1] += m
            total[n - 1] += t
        c += len(hyp)
        r += closest_ref_length(len(hyp), ref_set)
    if min(matched) == 0:
        return 0.0
    log_p = math.fsum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    return brevity_penalty(c, r) * math.exp(log_p)


def slot_error_rate(topk_per_da: Sequence[Sequence[Sequence[str]]],
                    das: Sequence[DialogueAct]) -> float:
    """Mean of (missing + redundant) / N_da over every (DA, candidate) pair."""
    if len(topk_per_da) != len(das):
        raise ValueError("need one candidate list per DA")
    errs = [error_rate(cand, da) for cands, da in zip(topk_per_da, das) for cand in cands]
    if not errs:
        raise ValueError("no candidates to score")
    return float(np.mean(errs))


def split_3_1_1(corpus: Sequence[T], seed: int) -> tuple[list[T], list[T], list[T]]:
    """Shuffled train/valid/test partition with sizes floor(3N/5), floor(N/5), rest."""
    N = len(corpus)
    if N < 5:
        raise ValueError(f"corpus of {N} items is too small to split 3:1:1")
    order = np.random.default_rng(seed).permutation(N)
    n_train, n_valid = (3 * N) // 5, N // 5
    pick = lambda idx: [corpus[i] for i in idx]
    return (pick(order[:n_train]), pick(order[n_train:n_train + n_valid]),
            pick(order[n_train + n_valid:]))


def group_references(instances: Sequence[Instance]) -> list[tuple[DialogueAct, list[list[str]]]]:
    """Collapse instances sharing a DA into one entry with all its references."""
    groups: dict[str, tuple[DialogueAct, list[list[str]]]] = {}
    for inst in instances:
        key = str(inst.da)
        if key not in groups:
            groups[key] = (inst.da, [])
        groups[key][1].append(list(inst.delex_tokens))
    return list(groups.values())


@dataclass
class EvalReport:
    bleu4: float
    err: float
    n_das: int
    details: list[dict] = field(default_factory=list)

    def to_dict(self, with_details: bool = True) -> dict:
        out = asdict(self)
        if not with_details:
            out.pop("details")
        return out


def evaluate_generator(gen: Generator, instances: Sequence[Instance], cfg: RerankConfig,
                       rng: np.random.Generator) -> EvalReport:
    """Rerank top-k realisations per distinct DA; BLEU pools every top-k candidate
    against that DA's references, ERR averages over the same candidates.

    Scoring is done on delexicalised tokens.
    """
    hyps, refs, topk, das, details = [], [], [], [], []
    for da, ref_set in group_references(instances):
        ranked = rerank(da, gen, cfg, rng)
        cands = [list(rc.tokens) for rc in ranked]
        topk.append(cands)
        das.append(da)
        for cand in cands:
            hyps.append(cand)
            refs.append(ref_set)
        details.append({
            "da": str(da),
            "n_slots": n_da_slots(da),
            "candidates": [
                {"text": " ".join(rc.tokens), "R": rc.score, "err": rc.err,
                 "missing": rc.missing, "redundant": rc.redundant}
                for rc in ranked
            ],
        })
    return EvalReport(corpus_bleu4(hyps, refs), slot_error_rate(topk, das), len(das), details)
