"""Semantically conditioned LSTM: cell, forward pass, cost, BPTT and ML training.

Parameter layout (n = hidden size, m = DA feature dimension, V = vocabulary):

    W_gates  (4n + m, 2n)   rows [i; f; o; r; c_hat], columns [embedding; h_prev]
    W_dc     (n, m)
    W_ho     (V, n)
    E        (n, V)         token embeddings, learned jointly

The reading gate has one row per DA feature so that ``d_t = r_t * d_{t-1}``
is well defined when m != n; with m == n W_gates is exactly 5n x 2n.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .dialogue_act import DAFeatureSpace, DialogueAct, Instance
from .nn_core import (ParamSet, clip_grad_norm, finite_diff_grad, init_uniform, log_softmax,
                      max_relative_error, sgd_step, sigmoid)
from .vocab import Vocabulary

log = logging.getLogger(__name__)

ETA = 1e-4
XI = 100.0


def param_shapes(hidden: int, vocab_size: int, da_dim: int) -> dict[str, tuple[int, int]]:
    n, V, m = hidden, vocab_size, da_dim
    return {
        "W_gates": (4 * n + m, 2 * n),
        "W_dc": (n, m),
        "W_ho": (V, n),
        "E": (n, V),
    }


def init_params(hidden: int, vocab_size: int, da_dim: int, rng: np.random.Generator,
                scale: float = 0.1) -> ParamSet:
    return init_uniform(param_shapes(hidden, vocab_size, da_dim), rng, scale)


def dims(params: ParamSet) -> tuple[int, int, int]:
    """(hidden, vocab size, DA dim) of a parameter set; validates consistency."""
    n = params["E"].shape[0]
    V = params["E"].shape[1]
    m = params["W_dc"].shape[1]
    if params.shapes() != param_shapes(n, V, m):
        raise ValueError(f"inconsistent SC-LSTM shapes: {params.shapes()}")
    return n, V, m


@dataclass(frozen=True)
class StepState:
    h: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @classmethod
    def initial(cls, d0: np.ndarray, hidden: int) -> "StepState":
        return cls(np.zeros(hidden), np.zeros(hidden), np.asarray(d0, dtype=float))


def cell_step(w_t: int, prev: StepState, params: ParamSet) -> tuple[StepState, dict[str, np.ndarray]]:
    n, V, m = dims(params)
    if not 0 <= w_t < V:
        raise IndexError(f"token index {w_t} outside vocabulary of size {V}")
    if prev.h.shape != (n,) or prev.c.shape != (n,) or prev.d.shape != (m,):
        raise ValueError("state shapes do not match parameters")
    u = np.concatenate([params["E"][:, w_t], prev.h])
    a = params["W_gates"] @ u
    s = sigmoid(a[:3 * n + m])
    i, f, o, r = s[:n], s[n:2 * n], s[2 * n:3 * n], s[3 * n:]
    c_hat = np.tanh(a[3 * n + m:])
    d = r * prev.d
    c = f * prev.c + i * c_hat + np.tanh(params["W_dc"] @ d)
    h = o * np.tanh(c)
    return StepState(h, c, d), {"i": i, "f": f, "o": o, "r": r, "c_hat": c_hat}


@dataclass
class ForwardTrace:
    """Everything BPTT needs. Column 0 of h/c/d is the initial state; column t+1 is step t."""

    tokens: np.ndarray      # (T,)
    x: np.ndarray           # (n, T) input embeddings
    gates: np.ndarray       # (3n + m, T) sigmoid outputs [i; f; o; r]
    c_hat: np.ndarray       # (n, T)
    g: np.ndarray           # (n, T) tanh(W_dc d_t)
    tanh_c: np.ndarray      # (n, T)
    h: np.ndarray           # (n, T + 1)
    c: np.ndarray           # (n, T + 1)
    d: np.ndarray           # (m, T + 1)
    logp: np.ndarray        # (V, T) log next-token distributions
    shapes: tuple[int, int, int]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp)

    def gate(self, name: str) -> np.ndarray:
        n, _, m = self.shapes
        sl = {"i": slice(0, n), "f": slice(n, 2 * n), "o": slice(2 * n, 3 * n),
              "r": slice(3 * n, 3 * n + m)}[name]
        return self.gates[sl]


def forward(tokens: Sequence[int], d0: np.ndarray, params: ParamSet) -> ForwardTrace:
    n, V, m = dims(params)
    tokens = np.asarray(tokens, dtype=np.int64)
    T = tokens.size
    if T == 0:
        raise ValueError("empty token sequence")
    if tokens.min() < 0 or tokens.max() >= V:
        raise IndexError("token index outside vocabulary")
    d0 = np.asarray(d0, dtype=float)
    if d0.shape != (m,):
        raise ValueError(f"d0 has shape {d0.shape}, expected ({m},)")

    W = params["W_gates"]
    Wh = W[:, n:]
    Wdc = params["W_dc"]
    x = params["E"][:, tokens]
    a_in = W[:, :n] @ x
    ns = 3 * n + m

    gates = np.empty((ns, T))
    c_hat = np.empty((n, T))
    g = np.empty((n, T))
    tanh_c = np.empty((n, T))
    h = np.zeros((n, T + 1))
    c = np.zeros((n, T + 1))
    d = np.empty((m, T + 1))
    d[:, 0] = d0
    for t in range(T):
        a = a_in[:, t] + Wh @ h[:, t]
        s = sigmoid(a[:ns])
        gates[:, t] = s
        ch = np.tanh(a[ns:])
        c_hat[:, t] = ch
        dt = s[3 * n:] * d[:, t]
        d[:, t + 1] = dt
        gt = np.tanh(Wdc @ dt)
        g[:, t] = gt
        ct = s[n:2 * n] * c[:, t] + s[:n] * ch + gt
        c[:, t + 1] = ct
        tc = np.tanh(ct)
        tanh_c[:, t] = tc
        h[:, t + 1] = s[2 * n:3 * n] * tc
    logp = log_softmax(params["W_ho"] @ h[:, 1:], axis=0)
    return ForwardTrace(tokens, x, gates, c_hat, g, tanh_c, h, c, d, logp, (n, V, m))


def _check_targets(trace: ForwardTrace, targets: Sequence[int]) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != trace.tokens.shape:
        raise ValueError(f"{targets.size} targets for a trace of length {len(trace)}")
    return targets


def cost_terms(trace: ForwardTrace, targets: Sequence[int], eta: float = ETA,
               xi: float = XI) -> tuple[float, float, float]:
    """(negative log-likelihood, |d_T|_1, sum_t eta * xi^|d_{t+1} - d_t|_1)."""
    targets = _check_targets(trace, targets)
    T = len(trace)
    nll = -float(np.sum(trace.logp[targets, np.arange(T)]))
    final = float(np.sum(np.abs(trace.d[:, -1])))
    steps = np.sum(np.abs(np.diff(trace.d, axis=1)), axis=0)
    transition = float(eta * np.sum(xi ** steps))
    return nll, final, transition


def ml_cost(trace: ForwardTrace, targets: Sequence[int], eta: float = ETA, xi: float = XI) -> float:
    """Cross-entropy plus the two DA-vector regularisers."""
    return sum(cost_terms(trace, targets, eta, xi))


def sequence_log_prob(trace: ForwardTrace, targets: Sequence[int]) -> float:
    targets = _check_targets(trace, targets)
    return float(np.sum(trace.logp[targets, np.arange(len(trace))]))


def backward(trace: ForwardTrace, targets: Sequence[int], params: ParamSet,
             nll_weight: float = 1.0, reg_weight: float = 1.0,
             eta: float = ETA, xi: float = XI) -> ParamSet:
    """Gradient of ``nll_weight * NLL + reg_weight * (DA regularisers)``.

    With the default weights this is the gradient of :func:`ml_cost`.
    """
    n, V, m = dims(params)
    if trace.shapes != (n, V, m):
        raise ValueError("trace was produced under parameters of a different shape")
    targets = _check_targets(trace, targets)
    T = len(trace)
    ns = 3 * n + m
    W = params["W_gates"]
    Wx, Wh = W[:, :n], W[:, n:]
    Wdc = params["W_dc"]
    W_ho = params["W_ho"]

    dlogits = np.exp(trace.logp)
    dlogits[targets, np.arange(T)] -= 1.0
    dlogits *= nll_weight
    grads = {"W_ho": dlogits @ trace.h[:, 1:].T}
    dH = W_ho.T @ dlogits

    # direct gradient of the regularisers w.r.t. each d column
    dD = np.zeros((m, T + 1))
    if reg_weight:
        delta = np.diff(trace.d, axis=1)
        steps = np.sum(np.abs(delta), axis=0)
        coef = reg_weight * eta * math.log(xi) * xi ** steps
        reg = coef[None, :] * np.sign(delta)
        dD[:, 1:] += reg
        dD[:, :-1] -= reg
        dD[:, T] += reg_weight * np.sign(trace.d[:, T])

    gates = trace.gates
    dA = np.empty((4 * n + m, T))
    dGpre = np.empty((n, T))
    dh_next = np.zeros(n)
    dc_next = np.zeros(n)
    dd_next = np.zeros(m)
    for t in range(T - 1, -1, -1):
        i = gates[:n, t]
        f = gates[n:2 * n, t]
        o = gates[2 * n:3 * n, t]
        r = gates[3 * n:, t]
        ch = trace.c_hat[:, t]
        tc = trace.tanh_c[:, t]
        dh = dH[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dgp = dc * (1.0 - trace.g[:, t] ** 2)
        dGpre[:, t] = dgp
        dd = dD[:, t + 1] + dd_next + Wdc.T @ dgp
        dA[:n, t] = dc * ch * i * (1.0 - i)
        dA[n:2 * n, t] = dc * trace.c[:, t] * f * (1.0 - f)
        dA[2 * n:3 * n, t] = dh * tc * o * (1.0 - o)
        dA[3 * n:ns, t] = dd * trace.d[:, t] * r * (1.0 - r)
        dA[ns:, t] = dc * i * (1.0 - ch * ch)
        dd_next = dd * r
        dh_next = Wh.T @ dA[:, t]
        dc_next = dc * f

    dW = np.empty_like(W)
    dW[:, :n] = dA @ trace.x.T
    dW[:, n:] = dA @ trace.h[:, :T].T
    grads["W_gates"] = dW
    grads["W_dc"] = dGpre @ trace.d[:, 1:].T
    dE = np.zeros_like(params["E"])
    np.add.at(dE.T, trace.tokens, (Wx.T @ dA).T)
    grads["E"] = dE
    return ParamSet({name: grads[name] for name in params.names()})


class Example(NamedTuple):
    inputs: np.ndarray   # BOS w_1 ... w_k
    targets: np.ndarray  # w_1 ... w_k EOS
    d0: np.ndarray


def make_example(tokens: Sequence[str], da: DialogueAct, vocab: Vocabulary,
                 space: DAFeatureSpace) -> Example:
    ids = vocab.encode(tokens)
    return Example(np.array([vocab.bos] + ids, dtype=np.int64),
                   np.array(ids + [vocab.eos], dtype=np.int64),
                   space.encode(da))


def example_cost(ex: Example, params: ParamSet) -> tuple[float, float]:
    """(training cost, NLL) of one example."""
    trace = forward(ex.inputs, ex.d0, params)
    nll, final, transition = cost_terms(trace, ex.targets)
    return nll + final + transition, nll


def corpus_cost(examples: Sequence[Example], params: ParamSet) -> dict[str, float]:
    total = nll = 0.0
    n_tok = 0
    for ex in examples:
        c, l = example_cost(ex, params)
        total += c
        nll += l
        n_tok += len(ex.targets)
    k = max(len(examples), 1)
    return {"cost": total / k, "nll_per_token": nll / max(n_tok, 1)}


def gradient_check(n_configs: int = 20, hidden: int = 8, vocab_size: int = 20, da_dim: int = 6,
                   max_len: int = 5, seed: int = 0, eps: float = 1e-4,
                   init_scale: float = 0.3) -> list[float]:
    """Compare ``backward`` with central differences of the full training cost
    on random small problems; returns the max relative error per problem.

    The default step is 1e-4: the transition penalty can push the cost into
    the hundreds, where a smaller step loses tiny coordinates to round-off.
    """
    errors = []
    for k in range(n_configs):
        rng = np.random.default_rng([seed, k])
        params = init_params(hidden, vocab_size, da_dim, rng, init_scale)
        T = int(rng.integers(1, max_len + 1))
        inputs = rng.integers(vocab_size, size=T).tolist()
        targets = rng.integers(vocab_size, size=T).tolist()
        d0 = (rng.random(da_dim) < 0.5).astype(float)
        analytic = backward(forward(inputs, d0, params), targets, params)
        numeric = finite_diff_grad(
            lambda p: sum(cost_terms(forward(inputs, d0, p), targets)), params, eps)
        errors.append(max_relative_error(analytic, numeric))
    return errors


@dataclass
class TrainConfig:
    hidden: int = 100
    lr: float = 0.1
    lr_decay: float = 0.5
    l2: float = 1e-5
    l2_every: int = 10
    patience: int = 5
    max_epochs: int = 50
    clip: float = 5.0
    init_scale: float = 0.1
    seed: int = 0

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(load_config_file(path))

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        return tomllib.loads(path.read_text(encoding="utf-8"))
    return json.loads(path.read_text(encoding="utf-8"))


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainResult:
    params: ParamSet
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid: float = math.inf
    epochs_run: int = 0


def train_ml(train: Sequence[Example], params0: ParamSet, cfg: TrainConfig,
             valid: Sequence[Example] | None = None, rng: np.random.Generator | None = None
             ) -> TrainResult:
    """Per-sentence SGD with early stopping on the validation cost.

    The l2 penalty is applied on every ``cfg.l2_every``-th update. The
    learning rate is multiplied by ``cfg.lr_decay`` whenever the validation
    cost fails to improve; training stops after ``cfg.patience`` such epochs.
    Returns the parameters with the best validation cost (the initial
    parameters count as epoch 0).

    Without a validation set the learning rate stays constant, all
    ``cfg.max_epochs`` epochs run, and selection uses the training cost.
    """
    if not train:
        raise ValueError("empty training set")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    held_out = bool(valid)
    valid = list(valid) if held_out else list(train)
    params = params0.copy()
    lr = cfg.lr
    best = corpus_cost(valid, params)["cost"]
    result = TrainResult(params.copy(), [], 0, best, 0)
    bad = 0
    seen = 0
    for epoch in range(1, cfg.max_epochs + 1):
        total = nll = 0.0
        n_tok = 0
        for k in rng.permutation(len(train)):
            ex = train[k]
            trace = forward(ex.inputs, ex.d0, params)
            terms = cost_terms(trace, ex.targets)
            total += sum(terms)
            nll += terms[0]
            n_tok += len(ex.targets)
            grads, _ = clip_grad_norm(backward(trace, ex.targets, params), cfg.clip)
            seen += 1
            l2 = cfg.l2 if cfg.l2_every and seen % cfg.l2_every == 0 else 0.0
            params = sgd_step(params, grads, lr, l2)
        v = corpus_cost(valid, params)["cost"]
        record = {"epoch": epoch, "lr": lr, "train_cost": total / len(train),
                  "train_nll_per_token": nll / n_tok, "valid_cost": v}
        result.history.append(record)
        result.epochs_run = epoch
        log.debug("epoch %d %s", epoch, record)
        if v < best:
            best = v
            bad = 0
            result.params = params.copy()
            result.best_epoch = epoch
            result.best_valid = v
        else:
            if not held_out:
                continue
            bad += 1
            lr *= cfg.lr_decay
            if bad >= cfg.patience:
                break
    return result


@dataclass
class Generator:
    """A trained SC-LSTM together with its vocabulary and DA feature space."""

    params: ParamSet
    vocab: Vocabulary
    space: DAFeatureSpace
    config: dict = field(default_factory=dict)

    @classmethod
    def create(cls, vocab: Vocabulary, space: DAFeatureSpace, hidden: int,
               rng: np.random.Generator, init_scale: float = 0.1, config: dict | None = None
               ) -> "Generator":
        return cls(init_params(hidden, len(vocab), space.dim, rng, init_scale), vocab, space,
                   dict(config or {}))

    @property
    def hidden(self) -> int:
        return self.params["E"].shape[0]

    def with_params(self, params: ParamSet) -> "Generator":
        return Generator(params, self.vocab, self.space, dict(self.config))

    def example(self, inst: Instance) -> Example:
        return make_example(inst.delex_tokens, inst.da, self.vocab, self.space)

    def examples(self, instances: Sequence[Instance]) -> list[Example]:
        return [self.example(x) for x in instances]

    def to_dict(self) -> dict:
        return {
            "format": "nlgadapt-checkpoint",
            "version": 1,
            "params": self.params.to_dict(),
            "vocab": self.vocab.to_list(),
            "feature_space": self.space.to_dict(),
            "config": self.config,
            "config_hash": config_hash(self.config),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Generator":
        if obj.get("format") != "nlgadapt-checkpoint":
            raise ValueError("not a model checkpoint")
        gen = cls(ParamSet.from_dict(obj["params"]), Vocabulary.from_list(obj["vocab"]),
                  DAFeatureSpace.from_dict(obj["feature_space"]), obj.get("config", {}))
        if obj.get("config_hash") != config_hash(gen.config):
            raise ValueError("checkpoint config hash mismatch")
        return gen

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Generator":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
