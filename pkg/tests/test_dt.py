import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlgadapt.decoder import Sample, recompute_log_prob
from nlgadapt.dialogue_act import INFORMABLE, DAFeatureSpace, DialogueAct, Instance, Ontology, SlotDef
from nlgadapt.dt import (Candidate, DTConfig, dt_cost, dt_finetune, dt_gradient, frozen_set_cost,
                         generate_candidates, normalize, score, sentence_bleu)
from nlgadapt.nn_core import ParamSet, finite_diff_grad, max_relative_error, sgd_step
from nlgadapt.sclstm import Generator, init_params, param_shapes
from nlgadapt.vocab import Vocabulary

ONT = Ontology("shop", ("inform",), (SlotDef("a", INFORMABLE), SlotDef("b", INFORMABLE)))
SPACE = DAFeatureSpace.from_ontology(ONT)
VOCAB = Vocabulary(["<I.a>", "<I.b>", "is", "nice", "."])
DA = DialogueAct("inform", (("a", "x"), ("b", "y")))


def _cand(log_prob, L=0.0, ids=()):
    return Candidate(tuple(ids), tuple(VOCAB.decode(ids)), log_prob, True, {"L": L})


def _gen(seed=0, scale=0.5, hidden=5):
    P = init_params(hidden, len(VOCAB), SPACE.dim, np.random.default_rng(seed), scale)
    return Generator(P, VOCAB, SPACE)


def test_normalize_examples():
    assert normalize([_cand(-3.0)], 5.0)[0].norm_prob == 1.0
    for g in (0.0, 1.0, 5.0, 100.0):
        ps = [c.norm_prob for c in normalize([_cand(-2.0), _cand(-2.0)], g)]
        assert ps == pytest.approx([0.5, 0.5])
    ps = [c.norm_prob for c in normalize([_cand(0.0), _cand(-1.0)], 5.0)]
    e = math.exp(-5)
    assert ps == pytest.approx([1 / (1 + e), e / (1 + e)], abs=1e-15)
    with pytest.raises(ValueError):
        normalize([], 1.0)


@given(st.lists(st.floats(-50, 0), min_size=1, max_size=8), st.floats(-20, 20), st.floats(0, 10))
def test_normalize_shift_invariant_and_sums_to_one(lps, shift, gamma):
    a = [c.norm_prob for c in normalize([_cand(x) for x in lps], gamma)]
    b = [c.norm_prob for c in normalize([_cand(x + shift) for x in lps], gamma)]
    assert sum(a) == pytest.approx(1.0, abs=1e-9)
    assert all(0.0 <= p <= 1.0 for p in a)
    np.testing.assert_allclose(a, b, atol=1e-9)


@given(st.lists(st.integers(0, 500), min_size=2, max_size=6, unique=True))
def test_large_gamma_concentrates_on_argmax(hundredths):
    # gaps of at least 0.01 nats: every rival is down-weighted by exp(-gamma * gap) or more
    lps = [-0.01 * k for k in hundredths]
    ps = [c.norm_prob for c in normalize([_cand(x) for x in lps], 1e3)]
    bound = 1.0 / (1.0 + (len(lps) - 1) * math.exp(-1e3 * 0.01))
    assert ps[int(np.argmax(lps))] >= bound - 1e-12
    if len(lps) == 2 and abs(lps[0] - lps[1]) >= 0.02:
        assert max(ps) >= 1 - 1e-6


def test_dt_cost_examples():
    assert dt_cost(normalize([_cand(-1.0, 0.7)], 5.0)) == pytest.approx(-0.7)
    cands = normalize([_cand(-1.0, 0.3), _cand(-4.0, 0.3), _cand(-0.2, 0.3)], 5.0)
    assert dt_cost(cands) == pytest.approx(-0.3)


def test_sentence_bleu_and_score():
    ref = ["<I.a>", "is", "nice", "and", "<I.b>", "."]
    assert sentence_bleu(ref, ref) == 1.0
    assert sentence_bleu([], ref) == 0.0
    # "<I.a> is nice": p = 3/3, 2/2, 1/1, and 1/(0+1) smoothed for n = 4 with zero 4-grams
    hyp = ["<I.a>", "is", "nice"]
    assert sentence_bleu(hyp, ref) == pytest.approx(math.exp(1 - 6 / 3))
    hyp = ["<I.a>", "is", "good", "and", "<I.b>", "."]
    # p = 5/6, 3/5, 1/4, smoothed 4-grams: 0 matches of 3 -> 1/4
    assert sentence_bleu(hyp, ref) == pytest.approx((5 / 6 * 3 / 5 * 1 / 4 * 1 / 4) ** 0.25)
    betas = {"bleu": 1.0, "err": -1.0}
    assert score(ref, ref, DA, betas) == {"bleu": 1.0, "err": 0.0, "L": 1.0}
    s = score(["is", "nice"], ref, DA, betas)
    assert s["err"] == 1.0 and s["L"] == pytest.approx(s["bleu"] - 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        DTConfig(n_samples=0)
    with pytest.raises(ValueError):
        DTConfig(betas={"meteor": 1.0})
    assert DTConfig().to_dict()["betas"] == {"bleu": 1.0, "err": -1.0}


def test_generate_candidates_dedupe_and_recompute():
    gen = _gen(scale=1.0)
    cands = generate_candidates(DA, gen, DTConfig(n_samples=30, max_len=6), np.random.default_rng(0))
    assert len({c.ids for c in cands}) == len(cands)
    for c in cands:
        assert recompute_log_prob(gen, DA, Sample(c.ids, c.log_prob, c.finished)) == \
            pytest.approx(c.log_prob, abs=1e-10)


def test_deterministic_model_gives_single_candidate():
    P = ParamSet({k: np.zeros(s) for k, s in param_shapes(4, len(VOCAB), SPACE.dim).items()})
    P["W_dc"][:] = 10.0
    P["W_ho"][VOCAB.eos, :] = 1000.0
    cands = generate_candidates(DA, Generator(P, VOCAB, SPACE), DTConfig(n_samples=50),
                                np.random.default_rng(0))
    assert len(cands) == 1 and cands[0].tokens == ()


def _frozen_set(gen, n=4, seed=0):
    cands = generate_candidates(DA, gen, DTConfig(n_samples=40, max_len=5), np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for c in cands[:n]:
        c.scores = {"L": float(rng.uniform(-1, 1))}
    return cands[:n]


@pytest.mark.parametrize("seed", range(5))
def test_dt_gradient_matches_finite_differences(seed):
    gen = _gen(seed=seed, scale=0.8, hidden=4)
    cands = _frozen_set(gen, seed=seed)
    assert len(cands) >= 2
    d0 = SPACE.encode(DA)
    grads, cost = dt_gradient(gen.params, cands, d0, gen, 5.0)
    assert cost == pytest.approx(frozen_set_cost(gen.params, cands, d0, gen, 5.0))
    num = finite_diff_grad(lambda q: frozen_set_cost(q, cands, d0, gen, 5.0), gen.params, 1e-5)
    assert max_relative_error(grads, num) < 1e-4


def test_equal_scores_give_zero_gradient():
    gen = _gen(scale=0.8)
    cands = _frozen_set(gen)
    for c in cands:
        c.scores = {"L": 0.4}
    grads, cost = dt_gradient(gen.params, cands, SPACE.encode(DA), gen, 5.0)
    assert grads.norm() == 0.0 and cost == pytest.approx(-0.4)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_update_raises_log_prob_of_better_candidate(seed):
    gen = _gen(seed=seed, scale=0.8)
    cands = sorted(_frozen_set(gen, n=40, seed=seed), key=lambda c: c.log_prob)
    pairs = [(a, b) for a, b in zip(cands, cands[1:]) if 1e-3 < b.log_prob - a.log_prob < 1.0]
    if not pairs:
        return
    lo, hi = pairs[0]
    lo.scores, hi.scores = {"L": 1.0}, {"L": 0.0}
    grads, _ = dt_gradient(gen.params, [lo, hi], SPACE.encode(DA), gen, 5.0)
    stepped = gen.with_params(sgd_step(gen.params, grads, 1e-3))
    before = recompute_log_prob(gen, DA, Sample(lo.ids, lo.log_prob, lo.finished))
    after = recompute_log_prob(stepped, DA, Sample(lo.ids, lo.log_prob, lo.finished))
    assert after > before


def test_dt_finetune_keeps_best_including_start():
    gen = _gen(scale=0.8)
    data = [Instance(DA, "x is nice and y .", ("<I.a>", "is", "nice", "<I.b>", "."),
                     {"<I.a>": "x", "<I.b>": "y"})]
    cfg = DTConfig(n_samples=10, epochs=2, max_len=8, lr=0.05)
    res = dt_finetune(data, gen, cfg, seed=3)
    assert [h["epoch"] for h in res.history] == [0, 1, 2]
    best = min(res.history, key=lambda h: h["valid_expected_loss"])
    assert res.best_epoch == best["epoch"]
    if res.best_epoch == 0:
        assert res.params.equal(gen.params)
    again = dt_finetune(data, gen, cfg, seed=3)
    assert again.params.equal(res.params) and again.history == res.history
    with pytest.raises(ValueError):
        dt_finetune([], gen, cfg, seed=0)
