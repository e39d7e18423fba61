"""Discriminative (expected-score) fine-tuning over sampled candidate sets.

For a DA with candidate set G, reference utterance and scores L(cand):

    p(cand)  = exp(gamma * log p(cand)) / sum_G exp(gamma * log p(.))
    F(theta) = -sum_G p(cand) * L(cand)

Scores are constants with respect to the parameters and the candidate set
is frozen during a gradient step, so

    dF/dtheta = sum_G gamma * p(cand) * (L(cand) - E[L]) * dNLL(cand)/dtheta.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .decoder import Sample, error_rate, sample_utterances
from .dialogue_act import DialogueAct, Instance
from .evaluation import brevity_penalty, clipped_counts
from .nn_core import ParamSet, clip_grad_norm, logsumexp, sgd_step
from .sclstm import Generator, backward, forward, sequence_log_prob

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DTConfig:
    gamma: float = 5.0
    betas: Mapping[str, float] = field(default_factory=lambda: {"bleu": 1.0, "err": -1.0})
    n_samples: int = 50
    lr: float = 0.01
    epochs: int = 3
    max_len: int = 80
    clip: float = 5.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        unknown = set(self.betas) - set(SCORERS)
        if unknown:
            raise ValueError(f"unknown scoring functions: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "betas": dict(self.betas), "n_samples": self.n_samples,
                "lr": self.lr, "epochs": self.epochs, "max_len": self.max_len, "clip": self.clip}


@dataclass
class Candidate:
    ids: tuple[int, ...]
    tokens: tuple[str, ...]
    log_prob: float
    finished: bool = True
    scores: dict[str, float] = field(default_factory=dict)
    norm_prob: float = float("nan")

    @property
    def loss(self) -> float:
        """Combined score L = sum_j beta_j L_j (stored under 'L')."""
        return self.scores["L"]


def sentence_bleu(hyp: Sequence[str], ref: Sequence[str], max_n: int = 4) -> float:
    """BLEU for a single sentence; orders with zero matches get add-one smoothing."""
    if not hyp:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        m, t = clipped_counts(hyp, [ref], n)
        log_p += math.log(m / t) if m > 0 else math.log(1.0 / (t + 1))
    bp = brevity_penalty(len(hyp), len(ref))
    return bp * math.exp(log_p / max_n)


SCORERS = {
    "bleu": lambda tokens, ref, da: sentence_bleu(tokens, ref),
    "err": lambda tokens, ref, da: error_rate(tokens, da),
}


def score(tokens: Sequence[str], ref: Instance | Sequence[str], da: DialogueAct,
          betas: Mapping[str, float]) -> dict[str, float]:
    ref_tokens = list(ref.delex_tokens) if isinstance(ref, Instance) else list(ref)
    out = {name: SCORERS[name](list(tokens), ref_tokens, da) for name in betas}
    out["L"] = sum(betas[name] * out[name] for name in betas)
    return out


def generate_candidates(da: DialogueAct, gen: Generator, cfg: DTConfig,
                        rng: np.random.Generator) -> list[Candidate]:
    """Sample ``cfg.n_samples`` utterances and drop repeats (first occurrence kept)."""
    samples = sample_utterances(gen.params, gen.space.encode(da), rng, cfg.n_samples,
                                cfg.max_len, gen.vocab.bos, gen.vocab.eos)
    seen: dict[tuple[int, ...], Candidate] = {}
    for s in samples:
        if s.ids in seen:
            continue
        if not math.isfinite(s.log_prob):
            continue
        seen[s.ids] = Candidate(s.ids, tuple(gen.vocab.decode(s.ids)), s.log_prob, s.finished)
    if not seen:
        raise RuntimeError(f"no usable candidates for {da}")
    return list(seen.values())


def normalize(cands: Sequence[Candidate], gamma: float) -> list[Candidate]:
    if not cands:
        raise ValueError("empty candidate list")
    z = gamma * np.array([c.log_prob for c in cands])
    probs = np.exp(z - logsumexp(z))
    for c, p in zip(cands, probs):
        c.norm_prob = float(p)
    return list(cands)


def dt_cost(cands: Sequence[Candidate]) -> float:
    """-E[L] under the normalised candidate distribution."""
    return -float(sum(c.norm_prob * c.loss for c in cands))


def _candidate_io(c: Candidate, gen: Generator) -> tuple[list[int], list[int]]:
    return Sample(c.ids, c.log_prob, c.finished).inputs_targets(gen.vocab.bos, gen.vocab.eos)


def frozen_set_cost(params: ParamSet, cands: Sequence[Candidate], d0: np.ndarray,
                    gen: Generator, gamma: float) -> float:
    """dt_cost with log-probabilities recomputed under ``params`` for a fixed candidate set."""
    lps = []
    for c in cands:
        inputs, targets = _candidate_io(c, gen)
        lps.append(sequence_log_prob(forward(inputs, d0, params), targets))
    z = gamma * np.array(lps)
    probs = np.exp(z - logsumexp(z))
    return -float(np.dot(probs, [c.loss for c in cands]))


def dt_gradient(params: ParamSet, cands: Sequence[Candidate], d0: np.ndarray, gen: Generator,
                gamma: float) -> tuple[ParamSet, float]:
    """Analytic gradient of the frozen-set cost; returns (grads, cost)."""
    traces, lps = [], []
    for c in cands:
        inputs, targets = _candidate_io(c, gen)
        tr = forward(inputs, d0, params)
        traces.append((tr, targets))
        lps.append(sequence_log_prob(tr, targets))
    z = gamma * np.array(lps)
    probs = np.exp(z - logsumexp(z))
    losses = np.array([c.loss for c in cands])
    # centre on one score so identical scores give exactly zero weights
    centred = losses - losses[0]
    spread = float(np.dot(probs, centred))
    expected = float(losses[0]) + spread
    grads = params.zeros_like()
    for (tr, targets), p, dL in zip(traces, probs, centred):
        w = gamma * p * (dL - spread)
        if w != 0.0:
            grads.add_(backward(tr, targets, params, nll_weight=w, reg_weight=0.0))
    return grads, -expected


def prepare_candidates(inst: Instance, gen: Generator, cfg: DTConfig,
                       rng: np.random.Generator) -> list[Candidate]:
    cands = generate_candidates(inst.da, gen, cfg, rng)
    for c in cands:
        c.scores = score(c.tokens, inst, inst.da, cfg.betas)
    return normalize(cands, cfg.gamma)


@dataclass
class DTResult:
    params: ParamSet
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def dt_epoch(dataset: Sequence[Instance], gen: Generator, cfg: DTConfig,
             rng: np.random.Generator) -> tuple[ParamSet, dict]:
    """One pass: per DA, sample, dedupe, score, normalise and take one SGD step."""
    params = gen.params.copy()
    costs = []
    for k in rng.permutation(len(dataset)):
        inst = dataset[k]
        current = gen.with_params(params)
        cands = prepare_candidates(inst, current, cfg, rng)
        grads, cost = dt_gradient(params, cands, gen.space.encode(inst.da), current, cfg.gamma)
        costs.append(cost)
        grads, _ = clip_grad_norm(grads, cfg.clip)
        params = sgd_step(params, grads, cfg.lr)
    return params, {"train_expected_loss": float(np.mean(costs)) if costs else 0.0}


def expected_loss(dataset: Sequence[Instance], gen: Generator, cfg: DTConfig,
                  rng: np.random.Generator) -> float:
    """Mean dt_cost over a dataset (sampled candidate sets)."""
    return float(np.mean([dt_cost(prepare_candidates(x, gen, cfg, rng)) for x in dataset]))


def dt_finetune(train: Sequence[Instance], gen: Generator, cfg: DTConfig, seed: int,
                valid: Sequence[Instance] | None = None) -> DTResult:
    """Run up to ``cfg.epochs`` DT passes keeping the parameters with the lowest
    validation expected loss (the starting model included)."""
    if not train:
        raise ValueError("empty DT training set")
    valid = list(valid) if valid else list(train)
    ss = np.random.SeedSequence(seed)
    train_ss, valid_ss = ss.spawn(2)
    train_rng = np.random.default_rng(train_ss)
    # the same validation stream for every epoch makes epochs comparable
    valid_seed = int(valid_ss.generate_state(1)[0])

    best = expected_loss(valid, gen, cfg, np.random.default_rng(valid_seed))
    result = DTResult(gen.params.copy(), [{"epoch": 0, "valid_expected_loss": best}], 0)
    current = gen
    for epoch in range(1, cfg.epochs + 1):
        params, stats = dt_epoch(train, current, cfg, train_rng)
        current = gen.with_params(params)
        v = expected_loss(valid, current, cfg, np.random.default_rng(valid_seed))
        result.history.append({"epoch": epoch, "valid_expected_loss": v, **stats})
        log.debug("dt epoch %d valid %.4f", epoch, v)
        if v < best:
            best = v
            result.params = params.copy()
            result.best_epoch = epoch
    return result
