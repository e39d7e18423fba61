import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlgadapt.corpus import generate_synthetic, similar_domains
from nlgadapt.dialogue_act import DAFeatureSpace
from nlgadapt.nn_core import ParamSet, finite_diff_grad, max_relative_error
from nlgadapt.sclstm import (ETA, Generator, StepState, TrainConfig, backward, cell_step,
                             config_hash, corpus_cost, cost_terms, forward, gradient_check,
                             init_params, ml_cost, param_shapes, sequence_log_prob, train_ml)
from nlgadapt.vocab import Vocabulary


def scalar_cell(w, h, c, d, P):
    """Straight-line recomputation of one SC-LSTM step with python floats."""
    n, m = len(h), len(d)
    W, Wdc, E = P["W_gates"].tolist(), P["W_dc"].tolist(), P["E"].tolist()
    u = [E[k][w] for k in range(n)] + list(h)
    pre = [sum(W[row][k] * u[k] for k in range(2 * n)) for row in range(4 * n + m)]
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    i = [sig(pre[k]) for k in range(n)]
    f = [sig(pre[n + k]) for k in range(n)]
    o = [sig(pre[2 * n + k]) for k in range(n)]
    r = [sig(pre[3 * n + k]) for k in range(m)]
    ch = [math.tanh(pre[3 * n + m + k]) for k in range(n)]
    d_new = [r[k] * d[k] for k in range(m)]
    c_new = [f[k] * c[k] + i[k] * ch[k] + math.tanh(sum(Wdc[k][j] * d_new[j] for j in range(m)))
             for k in range(n)]
    h_new = [o[k] * math.tanh(c_new[k]) for k in range(n)]
    return h_new, c_new, d_new, {"i": i, "f": f, "o": o, "r": r, "c_hat": ch}


@pytest.mark.parametrize("n,m,V", [(3, 3, 7), (3, 5, 4), (4, 2, 6)])
def test_cell_step_matches_scalar_oracle(n, m, V):
    rng = np.random.default_rng(n * 100 + m)
    for _ in range(20):
        P = init_params(n, V, m, rng, scale=1.0)
        prev = StepState(rng.normal(size=n), rng.normal(size=n), rng.random(m))
        w = int(rng.integers(V))
        state, gates = cell_step(w, prev, P)
        h, c, d, g = scalar_cell(w, prev.h, prev.c, prev.d, P)
        np.testing.assert_allclose(state.h, h, atol=1e-12, rtol=0)
        np.testing.assert_allclose(state.c, c, atol=1e-12, rtol=0)
        np.testing.assert_allclose(state.d, d, atol=1e-12, rtol=0)
        for k in g:
            np.testing.assert_allclose(gates[k], g[k], atol=1e-12, rtol=0)


def test_cell_step_zero_weights_fixed_point():
    P = ParamSet({k: np.zeros(s) for k, s in param_shapes(4, 5, 3).items()})
    state, gates = cell_step(2, StepState.initial(np.zeros(3), 4), P)
    assert not state.h.any() and not state.c.any() and not state.d.any()
    for k in ("i", "f", "o", "r"):
        np.testing.assert_array_equal(gates[k], 0.5)


def test_cell_step_zero_d_stays_zero_and_errors():
    P = init_params(4, 5, 3, np.random.default_rng(0), scale=2.0)
    state, _ = cell_step(1, StepState(np.ones(4), np.ones(4), np.zeros(3)), P)
    assert not state.d.any()
    with pytest.raises(IndexError):
        cell_step(5, StepState.initial(np.zeros(3), 4), P)
    with pytest.raises(ValueError):
        cell_step(0, StepState.initial(np.zeros(2), 4), P)


def test_forward_agrees_with_cell_steps():
    rng = np.random.default_rng(1)
    P = init_params(5, 9, 4, rng, scale=0.5)
    toks = [0, 3, 8, 2, 2]
    d0 = np.array([1.0, 0.0, 1.0, 1.0])
    tr = forward(toks, d0, P)
    state = StepState.initial(d0, 5)
    for t, w in enumerate(toks):
        state, gates = cell_step(w, state, P)
        np.testing.assert_allclose(tr.h[:, t + 1], state.h, atol=1e-13)
        np.testing.assert_allclose(tr.d[:, t + 1], state.d, atol=1e-13)
        np.testing.assert_allclose(tr.gate("r")[:, t], gates["r"], atol=1e-13)
        np.testing.assert_allclose(np.exp(tr.logp[:, t]), np.exp(tr.logp[:, t]) / np.exp(tr.logp[:, t]).sum())
    np.testing.assert_allclose(tr.probs.sum(axis=0), 1.0, atol=1e-12)


def test_forward_single_token_and_errors():
    P = init_params(3, 6, 2, np.random.default_rng(0))
    assert forward([0], np.ones(2), P).logp.shape == (6, 1)
    with pytest.raises(ValueError):
        forward([], np.ones(2), P)
    with pytest.raises(ValueError):
        forward([0], np.ones(3), P)
    with pytest.raises(IndexError):
        forward([6], np.ones(2), P)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_d_vector_contracts(seed, T):
    rng = np.random.default_rng(seed)
    m = 5
    P = init_params(4, 7, m, rng, scale=float(rng.uniform(0.1, 3.0)))
    d0 = (rng.random(m) < 0.5).astype(float)
    tr = forward(rng.integers(7, size=T), d0, P)
    assert np.all(tr.d >= 0) and np.all(tr.d <= 1)
    assert np.all(np.diff(tr.d, axis=1) <= 0)
    assert np.all(np.diff(np.abs(tr.d).sum(axis=0)) <= 0)
    assert np.all((tr.gates > 0) & (tr.gates < 1))


def test_cost_closed_forms():
    V, n, m = 20, 3, 2
    P = ParamSet({k: np.zeros(s) for k, s in param_shapes(n, V, m).items()})
    tr = forward([0], np.zeros(m), P)
    assert ml_cost(tr, [5]) == pytest.approx(math.log(20) + 1e-4, abs=1e-12)
    nll, final, trans = cost_terms(tr, [5])
    assert nll >= 0 and final == 0 and trans == pytest.approx(ETA)

    # a peaked output layer: p_t[target] -> 1 with constant-zero d gives T * eta
    P["W_ho"] = np.zeros((V, n))
    P["W_gates"][2 * n:3 * n, :] = 0.0
    P["W_gates"][3 * n + m:, :] = 0.0
    P["W_gates"][0:n, :n] = 0.0
    P["E"][:] = 0.0
    P["W_dc"][:] = 0.0
    tr = forward([0, 1, 2], np.zeros(m), P)
    tr.logp[:] = -np.inf
    tr.logp[4, :] = 0.0
    assert ml_cost(tr, [4, 4, 4]) == pytest.approx(3 * ETA)
    with pytest.raises(ValueError):
        ml_cost(tr, [4, 4])


def test_final_d_term_gradient_isolated():
    rng = np.random.default_rng(2)
    P = init_params(4, 6, 3, rng, scale=0.5)
    d0 = np.array([1.0, 1.0, 0.0])
    toks, tgts = [0, 2, 3], [2, 3, 1]
    tr = forward(toks, d0, P)
    g = backward(tr, tgts, P, nll_weight=0.0, reg_weight=1.0, eta=0.0)
    num = finite_diff_grad(lambda q: float(np.abs(forward(toks, d0, q).d[:, -1]).sum()), P, 1e-6)
    assert max_relative_error(g, num) < 1e-5
    # W_ho and E never influence d
    assert not g["W_ho"].any()


def test_unused_embedding_columns_get_zero_gradient():
    P = init_params(4, 8, 3, np.random.default_rng(3))
    tr = forward([0, 1, 2], np.ones(3), P)
    g = backward(tr, [1, 2, 3], P)
    assert not g["E"][:, 3:].any()
    assert g["E"][:, :3].any()


def test_backward_matches_finite_differences():
    errs = gradient_check(n_configs=5, seed=123)
    assert max(errs) < 1e-4


def test_backward_rejects_stale_trace():
    P = init_params(4, 8, 3, np.random.default_rng(3))
    tr = forward([0, 1], np.ones(3), P)
    with pytest.raises(ValueError):
        backward(tr, [1, 2], init_params(5, 8, 3, np.random.default_rng(3)))


def test_sequence_log_prob_is_negative_nll():
    P = init_params(4, 8, 3, np.random.default_rng(4))
    tr = forward([0, 5, 6], np.ones(3), P)
    assert sequence_log_prob(tr, [5, 6, 1]) == pytest.approx(-cost_terms(tr, [5, 6, 1])[0])


@pytest.fixture(scope="module")
def tiny_corpus():
    syn = generate_synthetic(similar_domains(seed=1, source_size=20, target_size=5))
    vocab = Vocabulary.build(x.delex_tokens for x in syn.source)
    space = DAFeatureSpace.from_ontology(syn.source_ont)
    return syn.source, vocab, space


def test_training_cost_decreases_then_stops(tiny_corpus):
    data, vocab, space = tiny_corpus
    cfg = TrainConfig(hidden=32, max_epochs=8, patience=100)
    gen = Generator.create(vocab, space, 32, np.random.default_rng(0))
    res = train_ml(gen.examples(data), gen.params, cfg, rng=np.random.default_rng(1))
    costs = [h["train_cost"] for h in res.history]
    assert all(b < a for a, b in zip(costs[:5], costs[1:6]))
    assert res.best_epoch == min(range(1, len(costs) + 1), key=lambda e: res.history[e - 1]["valid_cost"])


def test_training_is_deterministic_and_early_stops(tiny_corpus):
    data, vocab, space = tiny_corpus
    gen = Generator.create(vocab, space, 8, np.random.default_rng(0))
    ex = gen.examples(data)
    cfg = TrainConfig(hidden=8, max_epochs=60, patience=2, lr=0.5)
    a = train_ml(ex[:15], gen.params, cfg, ex[15:], np.random.default_rng(5))
    b = train_ml(ex[:15], gen.params, cfg, ex[15:], np.random.default_rng(5))
    assert a.params.equal(b.params)
    if a.epochs_run < cfg.max_epochs:
        assert a.epochs_run - a.best_epoch == cfg.patience
    assert corpus_cost(ex[15:], a.params)["cost"] == pytest.approx(a.best_valid)
    with pytest.raises(ValueError):
        train_ml([], gen.params, cfg)


def test_single_instance_overfits():
    syn = generate_synthetic(similar_domains(seed=0, source_size=1, target_size=1))
    inst = syn.source[0]
    vocab = Vocabulary.build([inst.delex_tokens])
    space = DAFeatureSpace.from_ontology(syn.source_ont)
    gen = Generator.create(vocab, space, 32, np.random.default_rng(0))
    cfg = TrainConfig(hidden=32, max_epochs=500, patience=500)
    res = train_ml(gen.examples([inst]), gen.params, cfg, rng=np.random.default_rng(0))
    nll = corpus_cost(gen.examples([inst]), res.params)["nll_per_token"]
    assert nll < 0.01


def test_train_config_loading(tmp_path):
    (tmp_path / "c.toml").write_text("hidden = 16\nlr = 0.05\npatience = 3\n")
    (tmp_path / "c.json").write_text('{"hidden": 16, "lr": 0.05, "patience": 3}')
    a, b = TrainConfig.load(tmp_path / "c.toml"), TrainConfig.load(tmp_path / "c.json")
    assert a == b and a.hidden == 16 and a.l2_every == 10
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"hiden": 3})


def test_generator_checkpoint_roundtrip(tmp_path, tiny_corpus):
    _, vocab, space = tiny_corpus
    gen = Generator.create(vocab, space, 6, np.random.default_rng(9), config={"a": 1})
    gen.save(tmp_path / "m.json")
    back = Generator.load(tmp_path / "m.json")
    assert back.params.equal(gen.params) and back.vocab == vocab and back.space == space
    assert back.config == {"a": 1}
    blob = gen.to_dict()
    blob["config"] = {"a": 2}
    with pytest.raises(ValueError):
        Generator.from_dict(blob)
    assert config_hash({"x": 1, "y": 2}) == config_hash({"y": 2, "x": 1})
