"""Stochastic decoding and over-generate-then-rerank."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dialogue_act import DialogueAct, is_slot_token, parse_slot_token
from .nn_core import log_softmax, sample_columns, sigmoid
from .sclstm import Generator, cost_terms, dims, forward, sequence_log_prob
from .nn_core import ParamSet


@dataclass(frozen=True)
class RerankConfig:
    n_over: int = 20
    top_k: int = 5
    lam: float = 10.0
    max_len: int = 80

    def __post_init__(self):
        if self.top_k > self.n_over:
            raise ValueError("top_k must not exceed n_over")
        if self.n_over < 1 or self.max_len < 1:
            raise ValueError("n_over and max_len must be positive")


@dataclass(frozen=True)
class Sample:
    ids: tuple[int, ...]    # surface token ids, no BOS/EOS
    log_prob: float
    finished: bool          # False when cut at max_len

    def inputs_targets(self, bos: int, eos: int) -> tuple[list[int], list[int]]:
        ids = list(self.ids)
        if self.finished:
            return [bos] + ids, ids + [eos]
        return [bos] + ids[:-1], ids


def sample_utterances(params: ParamSet, d0: np.ndarray, rng: np.random.Generator, k: int,
                      max_len: int, bos: int = 0, eos: int = 1) -> list[Sample]:
    """Draw ``k`` independent utterances in parallel (one column per sample)."""
    n, V, m = dims(params)
    W = params["W_gates"]
    Wx, Wh = W[:, :n], W[:, n:]
    Wdc, W_ho, E = params["W_dc"], params["W_ho"], params["E"]
    ns = 3 * n + m
    h = np.zeros((n, k))
    c = np.zeros((n, k))
    d = np.repeat(np.asarray(d0, dtype=float)[:, None], k, axis=1)
    tok = np.full(k, bos, dtype=np.int64)
    alive = np.ones(k, dtype=bool)
    finished = np.zeros(k, dtype=bool)
    logp = np.zeros(k)
    out: list[list[int]] = [[] for _ in range(k)]
    cols = np.arange(k)
    while alive.any():
        a = Wx @ E[:, tok] + Wh @ h
        s = sigmoid(a[:ns])
        d = s[3 * n:] * d
        c = s[n:2 * n] * c + s[:n] * np.tanh(a[ns:]) + np.tanh(Wdc @ d)
        h = s[2 * n:3 * n] * np.tanh(c)
        lp = log_softmax(W_ho @ h, axis=0)
        tok = sample_columns(np.exp(lp), rng)
        for j in cols[alive]:
            w = int(tok[j])
            logp[j] += lp[w, j]
            if w == eos:
                alive[j] = False
                finished[j] = True
            else:
                out[j].append(w)
                if len(out[j]) >= max_len:
                    alive[j] = False
    return [Sample(tuple(out[j]), float(logp[j]), bool(finished[j])) for j in range(k)]


def sample_utterance(gen: Generator, da: DialogueAct, rng: np.random.Generator,
                     max_len: int = 80) -> tuple[list[str], float]:
    s = sample_utterances(gen.params, gen.space.encode(da), rng, 1, max_len,
                          gen.vocab.bos, gen.vocab.eos)[0]
    return gen.vocab.decode(s.ids), s.log_prob


def recompute_log_prob(gen: Generator, da: DialogueAct, sample: Sample) -> float:
    inputs, targets = sample.inputs_targets(gen.vocab.bos, gen.vocab.eos)
    return sequence_log_prob(forward(inputs, gen.space.encode(da), gen.params), targets)


def slot_errors(tokens: Iterable[str], da: DialogueAct) -> tuple[int, int]:
    """(missing, redundant) slot tokens by exact matching against the DA.

    A slot counts as present if any slot token naming it occurs; every
    further copy, and every token for a slot not valued in the DA, is
    redundant.
    """
    required = {slot for slot, _ in da.delex_slots()}
    counts = Counter(parse_slot_token(t)[1] for t in tokens if is_slot_token(t))
    missing = sum(1 for slot in required if counts[slot] == 0)
    redundant = sum(cnt - (1 if slot in required else 0) for slot, cnt in counts.items())
    return missing, redundant


def n_da_slots(da: DialogueAct) -> int:
    return max(1, len(da.delex_slots()))


def error_rate(tokens: Sequence[str], da: DialogueAct) -> float:
    missing, redundant = slot_errors(tokens, da)
    return (missing + redundant) / n_da_slots(da)


@dataclass(frozen=True)
class RankedCandidate:
    tokens: tuple[str, ...]
    score: float        # R
    cost: float
    missing: int
    redundant: int
    err: float
    log_prob: float = float("nan")


def rank_candidates(cands: Iterable[tuple[Sequence[str], float]], da: DialogueAct,
                    lam: float = 10.0, log_probs: Sequence[float] | None = None
                    ) -> list[RankedCandidate]:
    """Score (tokens, model cost) pairs by R = -(cost + lam * ERR), dedupe and sort.

    Ties in R go to the shorter candidate, then to the lexicographically
    smaller token sequence.
    """
    seen = set()
    ranked = []
    lps = list(log_probs) if log_probs is not None else None
    for idx, (tokens, cost) in enumerate(cands):
        tokens = tuple(tokens)
        if tokens in seen:
            continue
        seen.add(tokens)
        missing, redundant = slot_errors(tokens, da)
        err = (missing + redundant) / n_da_slots(da)
        ranked.append(RankedCandidate(tokens, -(cost + lam * err), cost, missing, redundant, err,
                                      lps[idx] if lps is not None else float("nan")))
    ranked.sort(key=lambda rc: (-rc.score, len(rc.tokens), rc.tokens))
    return ranked


def rerank(da: DialogueAct, gen: Generator, cfg: RerankConfig, rng: np.random.Generator
           ) -> list[RankedCandidate]:
    """Over-generate ``cfg.n_over`` samples and return the best ``cfg.top_k`` distinct ones.

    The model cost of a candidate is its full training cost (NLL plus the DA
    regularisers) under the generator.
    """
    d0 = gen.space.encode(da)
    samples = sample_utterances(gen.params, d0, rng, cfg.n_over, cfg.max_len,
                                gen.vocab.bos, gen.vocab.eos)
    unique: dict[tuple[int, ...], Sample] = {}
    for s in samples:
        unique.setdefault(s.ids, s)
    scored = []
    lps = []
    for s in unique.values():
        inputs, targets = s.inputs_targets(gen.vocab.bos, gen.vocab.eos)
        cost = sum(cost_terms(forward(inputs, d0, gen.params), targets))
        scored.append((gen.vocab.decode(s.ids), cost))
        lps.append(s.log_prob)
    return rank_candidates(scored, da, cfg.lam, lps)[:cfg.top_k]
