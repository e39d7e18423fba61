"""The four training regimes (scratch, tune, counterfeit, counterfeit+DT),
adaptation-curve sweeps and multi-seed averaging."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import SynthSpec, generate_synthetic, load_corpus
from .counterfeit import CounterfeitPlan, counterfeit_corpus
from .decoder import RerankConfig
from .dialogue_act import DAFeatureSpace, Instance, Ontology
from .dt import DTConfig, dt_finetune
from .evaluation import EvalReport, evaluate_generator, split_3_1_1
from .sclstm import Generator, TrainConfig, config_hash, load_config_file, train_ml
from .vocab import Vocabulary

log = logging.getLogger(__name__)

REGIMES = ("scratch", "tune", "counterfeit", "counterfeit_dt")
DEFAULT_FRACTIONS = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)

# stream identifiers for per-seed RNGs
_INIT_SCRATCH, _INIT_SOURCE, _INIT_CF = 1, 2, 3
_TRAIN_SCRATCH, _TRAIN_SOURCE, _TRAIN_CF, _REFINE = 11, 12, 13, 14
_ADAPT_ORDER, _COUNTERFEIT, _DT, _EVAL = 21, 22, 23, 31


class ConfigError(ValueError):
    pass


@dataclass
class RecipeConfig:
    regimes: tuple[str, ...] = ("scratch", "tune", "counterfeit")
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune_lr_scale: float = 0.5
    finetune_max_epochs: int = 200     # small adaptation sets need many low-lr epochs
    dt: DTConfig = field(default_factory=DTConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    distinct_slots: bool = True
    synth: SynthSpec | None = field(default_factory=SynthSpec)
    source_corpus: str | None = None
    target_corpus: str | None = None
    source_ontology: str | None = None
    target_ontology: str | None = None
    eval_limit: int | None = None      # cap on test DAs per run (None = whole test split)

    def __post_init__(self):
        self.regimes = tuple(self.regimes)
        self.fractions = tuple(float(f) for f in self.fractions)
        self.seeds = tuple(int(s) for s in self.seeds)
        bad = [r for r in self.regimes if r not in REGIMES]
        if bad:
            raise ConfigError(f"unknown regimes {bad}")
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"adaptation fraction {f} outside (0, 1]")
        if not self.seeds:
            raise ConfigError("need at least one seed")

    def to_dict(self) -> dict:
        return {
            "regimes": list(self.regimes),
            "fractions": list(self.fractions),
            "seeds": list(self.seeds),
            "train": asdict(self.train),
            "finetune_lr_scale": self.finetune_lr_scale,
            "finetune_max_epochs": self.finetune_max_epochs,
            "dt": self.dt.to_dict(),
            "rerank": asdict(self.rerank),
            "distinct_slots": self.distinct_slots,
            "synth": self.synth.to_dict() if self.synth is not None else None,
            "source_corpus": self.source_corpus,
            "target_corpus": self.target_corpus,
            "source_ontology": self.source_ontology,
            "target_ontology": self.target_ontology,
            "eval_limit": self.eval_limit,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RecipeConfig":
        obj = dict(obj)
        if "train" in obj:
            obj["train"] = TrainConfig.from_dict(obj["train"])
        if "dt" in obj:
            obj["dt"] = DTConfig(**obj["dt"])
        if "rerank" in obj:
            obj["rerank"] = RerankConfig(**obj["rerank"])
        if obj.get("synth") is not None:
            obj["synth"] = SynthSpec.from_dict(obj["synth"])
        if isinstance(obj.get("seeds"), int):
            obj["seeds"] = tuple(range(1, obj["seeds"] + 1))
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "RecipeConfig":
        return cls.from_dict(load_config_file(path))


@dataclass
class ExperimentData:
    source: list[Instance]
    target: list[Instance]
    source_ont: Ontology
    target_ont: Ontology
    vocab: Vocabulary
    space: DAFeatureSpace


def load_data(cfg: RecipeConfig) -> ExperimentData:
    if cfg.source_corpus:
        if not (cfg.target_corpus and cfg.source_ontology and cfg.target_ontology):
            raise ConfigError("corpus paths need both corpora and both ontologies")
        s_ont = Ontology.load(cfg.source_ontology)
        t_ont = Ontology.load(cfg.target_ontology)
        source = load_corpus(cfg.source_corpus, s_ont)
        target = load_corpus(cfg.target_corpus, t_ont)
    elif cfg.synth is not None:
        syn = generate_synthetic(cfg.synth)
        source, target, s_ont, t_ont = syn.source, syn.target, syn.source_ont, syn.target_ont
    else:
        raise ConfigError("no data: give corpus paths or a synthetic spec")
    vocab = Vocabulary.build((x.delex_tokens for x in source + target),
                             extra=s_ont.slot_tokens() + t_ont.slot_tokens())
    space = DAFeatureSpace.from_ontology(s_ont, t_ont)
    return ExperimentData(source, target, s_ont, t_ont, vocab, space)


def _rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, *extra])


def _fraction_key(fraction: float) -> int:
    return int(round(fraction * 1_000_000))


@dataclass
class RunResult:
    regime: str
    fraction: float
    seed: int
    bleu: float
    err: float
    extra: dict = field(default_factory=dict)


@dataclass
class RegimeReport:
    regime: str
    fraction: float
    runs: list[RunResult]
    meta: dict = field(default_factory=dict)

    @property
    def mean_bleu(self) -> float:
        return float(np.mean([r.bleu for r in self.runs]))

    @property
    def mean_err(self) -> float:
        return float(np.mean([r.err for r in self.runs]))

    def to_dict(self) -> dict:
        return {"regime": self.regime, "fraction": self.fraction,
                "runs": [asdict(r) for r in self.runs],
                "mean_bleu": self.mean_bleu, "mean_err": self.mean_err, "meta": self.meta}


class SeedContext:
    """Splits, adaptation subsets and cached models for one seed."""

    def __init__(self, data: ExperimentData, cfg: RecipeConfig, seed: int):
        self.data, self.cfg, self.seed = data, cfg, seed
        self.src_train, self.src_valid, _ = split_3_1_1(data.source, seed)
        self.tgt_train, self.tgt_valid, test = split_3_1_1(data.target, seed)
        self.test = test[:cfg.eval_limit] if cfg.eval_limit else test
        self.adapt_order = _rng(seed, _ADAPT_ORDER).permutation(len(self.tgt_train))
        self._cache: dict = {}

    # data -----------------------------------------------------------------
    def adaptation(self, fraction: float) -> tuple[list[Instance], list[Instance]]:
        """Nested subsample of the target training split, divided 3:1 into train/valid."""
        if not 0.0 < fraction <= 1.0:
            raise ConfigError(f"adaptation fraction {fraction} outside (0, 1]")
        k = max(1, int(round(fraction * len(self.tgt_train))))
        picked = [self.tgt_train[i] for i in self.adapt_order[:k]]
        train = [x for j, x in enumerate(picked) if j % 4 != 3]
        valid = [x for j, x in enumerate(picked) if j % 4 == 3]
        if not train:
            raise ConfigError("adaptation fraction yields no training instance")
        return train, valid

    def counterfeit_data(self) -> tuple[list[Instance], list[Instance]]:
        if "cf_data" not in self._cache:
            plan = CounterfeitPlan.build(self.data.source_ont, self.data.target_ont,
                                         distinct=self.cfg.distinct_slots)
            base = int(_rng(self.seed, _COUNTERFEIT).integers(2**31))
            self._cache["cf_data"] = (counterfeit_corpus(self.src_train, plan, base),
                                      counterfeit_corpus(self.src_valid, plan, base + 1))
        return self._cache["cf_data"]

    # models ---------------------------------------------------------------
    def _new_generator(self, stream: int) -> Generator:
        tc = self.cfg.train
        return Generator.create(self.data.vocab, self.data.space, tc.hidden,
                                _rng(self.seed, stream), tc.init_scale,
                                config={"train": asdict(tc), "seed": self.seed})

    def _train(self, gen: Generator, train: Sequence[Instance], valid: Sequence[Instance],
               tc: TrainConfig, stream: int, *extra: int) -> tuple[Generator, dict]:
        t0 = time.perf_counter()
        res = train_ml(gen.examples(train), gen.params, tc, gen.examples(valid) or None,
                       _rng(self.seed, stream, *extra))
        # wall-clock time is logged, not stored, so result files stay reproducible
        log.debug("trained %d epochs in %.1fs", res.epochs_run, time.perf_counter() - t0)
        info = {"epochs": res.epochs_run, "best_epoch": res.best_epoch,
                "best_valid_cost": res.best_valid, "history": res.history}
        return gen.with_params(res.params), info

    def scratch_model(self, fraction: float) -> tuple[Generator, dict]:
        """A fresh generator trained on the target adaptation subset only."""
        train, valid = self.adaptation(fraction)
        return self._train(self._new_generator(_INIT_SCRATCH), train, valid, self.cfg.train,
                           _TRAIN_SCRATCH, _fraction_key(fraction))

    def source_model(self) -> Generator:
        if "source" not in self._cache:
            gen, info = self._train(self._new_generator(_INIT_SOURCE), self.src_train,
                                    self.src_valid, self.cfg.train, _TRAIN_SOURCE)
            self._cache["source"] = gen
            self._cache["source_info"] = info
        return self._cache["source"]

    def counterfeit_model(self) -> Generator:
        if "cf" not in self._cache:
            train, valid = self.counterfeit_data()
            gen, info = self._train(self._new_generator(_INIT_CF), train, valid,
                                    self.cfg.train, _TRAIN_CF)
            self._cache["cf"] = gen
            self._cache["cf_info"] = info
        return self._cache["cf"]

    def refine(self, base: Generator, fraction: float, tag: int) -> tuple[Generator, dict]:
        train, valid = self.adaptation(fraction)
        tc = self.cfg.train.replace(lr=self.cfg.train.lr * self.cfg.finetune_lr_scale,
                                    max_epochs=self.cfg.finetune_max_epochs)
        return self._train(base, train, valid, tc, _REFINE, tag, _fraction_key(fraction))

    def evaluate(self, gen: Generator, instances: Sequence[Instance] | None = None,
                 tag: int = 0) -> EvalReport:
        insts = self.test if instances is None else instances
        return evaluate_generator(gen, insts, self.cfg.rerank, _rng(self.seed, _EVAL, tag))

    def zero_shot(self, which: str) -> EvalReport:
        """The 0%-adaptation point: a source-side model evaluated before refinement."""
        key = f"zero_{which}"
        if key not in self._cache:
            gen = self.source_model() if which == "tune" else self.counterfeit_model()
            self._cache[key] = self.evaluate(gen)
        return self._cache[key]


def run_cell(regime: str, fraction: float, ctx: SeedContext) -> RunResult:
    """Train and evaluate one (regime, fraction, seed) cell."""
    fk = _fraction_key(fraction)
    extra: dict = {}
    if regime == "scratch":
        gen, info = ctx.scratch_model(fraction)
    elif regime == "tune":
        gen, info = ctx.refine(ctx.source_model(), fraction, 1)
        zero = ctx.zero_shot("tune")
        extra["zero_shot"] = {"bleu": zero.bleu4, "err": zero.err}
    elif regime in ("counterfeit", "counterfeit_dt"):
        key = ("cf_refined", fk)
        if key not in ctx._cache:
            ctx._cache[key] = ctx.refine(ctx.counterfeit_model(), fraction, 2)
        gen, info = ctx._cache[key]
        zero = ctx.zero_shot("counterfeit")
        extra["zero_shot"] = {"bleu": zero.bleu4, "err": zero.err}
        if regime == "counterfeit_dt":
            return _run_dt(gen, fraction, ctx, info)
    else:
        raise ConfigError(f"unknown regime {regime!r}")
    report = ctx.evaluate(gen)
    extra["train"] = {k: v for k, v in info.items() if k != "history"}
    extra["n_test_das"] = report.n_das
    return RunResult(regime, fraction, ctx.seed, report.bleu4, report.err, extra)


def _run_dt(ml_gen: Generator, fraction: float, ctx: SeedContext, info: dict) -> RunResult:
    train, valid = ctx.adaptation(fraction)
    cfg = ctx.cfg.dt
    res = dt_finetune(train, ml_gen, cfg, seed=int(_rng(ctx.seed, _DT, _fraction_key(fraction))
                                                    .integers(2**31)), valid=valid)
    dt_gen = ml_gen.with_params(res.params)
    ml_test, dt_test = ctx.evaluate(ml_gen), ctx.evaluate(dt_gen)
    ml_train, dt_train = ctx.evaluate(ml_gen, train, tag=2), ctx.evaluate(dt_gen, train, tag=2)
    extra = {
        "gamma": cfg.gamma,
        "betas": dict(cfg.betas),
        "n_samples": cfg.n_samples,
        "dt_best_epoch": res.best_epoch,
        "dt_history": res.history,
        "ml": {"test_bleu": ml_test.bleu4, "test_err": ml_test.err,
               "train_bleu": ml_train.bleu4, "train_err": ml_train.err},
        "ml_dt": {"test_bleu": dt_test.bleu4, "test_err": dt_test.err,
                  "train_bleu": dt_train.bleu4, "train_err": dt_train.err},
        "train": {k: v for k, v in info.items() if k != "history"},
    }
    return RunResult("counterfeit_dt", fraction, ctx.seed, dt_test.bleu4, dt_test.err, extra)


def _run_regime(regime: str, cfg: RecipeConfig, fraction: float | None = None,
                data: ExperimentData | None = None) -> RegimeReport:
    if fraction is None:
        if len(cfg.fractions) != 1:
            raise ConfigError("pass a fraction or configure exactly one")
        fraction = cfg.fractions[0]
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"adaptation fraction {fraction} outside (0, 1]")
    data = data or load_data(cfg)
    runs = [run_cell(regime, fraction, SeedContext(data, cfg, s)) for s in cfg.seeds]
    meta = {"config_hash": config_hash(cfg.to_dict())}
    if regime == "counterfeit_dt":
        meta.update(gamma=cfg.dt.gamma, betas=dict(cfg.dt.betas))
    return RegimeReport(regime, fraction, runs, meta)


def run_scratch(cfg: RecipeConfig, fraction: float | None = None, data=None) -> RegimeReport:
    return _run_regime("scratch", cfg, fraction, data)


def run_finetune(cfg: RecipeConfig, fraction: float | None = None, data=None) -> RegimeReport:
    return _run_regime("tune", cfg, fraction, data)


def run_counterfeit(cfg: RecipeConfig, fraction: float | None = None, data=None) -> RegimeReport:
    return _run_regime("counterfeit", cfg, fraction, data)


def run_counterfeit_dt(cfg: RecipeConfig, fraction: float | None = None, data=None) -> RegimeReport:
    return _run_regime("counterfeit_dt", cfg, fraction, data)


ROW_FIELDS = ("regime", "fraction", "seed", "bleu", "err")


def sweep(cfg: RecipeConfig, data: ExperimentData | None = None) -> dict:
    """Run regimes x fractions x seeds. Returns {'rows', 'summary', 'runs'}.

    Source-side models are trained once per seed and shared across fractions.
    """
    if len(cfg.fractions) < 2:
        raise ConfigError("a sweep needs at least two adaptation fractions")
    data = data or load_data(cfg)
    runs: list[RunResult] = []
    for seed in cfg.seeds:
        ctx = SeedContext(data, cfg, seed)
        for fraction in cfg.fractions:
            for regime in cfg.regimes:
                t0 = time.perf_counter()
                r = run_cell(regime, fraction, ctx)
                log.info("seed %d  %-14s %6.2f%%  bleu %.4f  err %.4f  (%.1fs)", seed, regime,
                         100 * fraction, r.bleu, r.err, time.perf_counter() - t0)
                runs.append(r)
    rows = [{"regime": r.regime, "fraction": r.fraction, "seed": r.seed,
             "bleu": r.bleu, "err": r.err} for r in runs]
    return {"rows": rows, "summary": summarize(rows), "runs": [asdict(r) for r in runs],
            "config": cfg.to_dict(), "config_hash": config_hash(cfg.to_dict())}


def summarize(rows: Sequence[dict]) -> list[dict]:
    groups: dict[tuple[str, float], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["regime"], row["fraction"]), []).append(row)
    return [{"regime": reg, "fraction": frac, "n_seeds": len(g),
             "mean_bleu": float(np.mean([r["bleu"] for r in g])),
             "mean_err": float(np.mean([r["err"] for r in g]))}
            for (reg, frac), g in groups.items()]


def write_sweep(result: dict, outdir: str | Path) -> dict[str, Path]:
    """Write rows.csv, summary.csv, runs.json and manifest.json into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"rows": outdir / "rows.csv", "summary": outdir / "summary.csv",
             "runs": outdir / "runs.json", "manifest": outdir / "manifest.json"}
    with open(paths["rows"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in result["rows"]:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    with open(paths["summary"], "w", newline="") as fh:
        fields_ = ("regime", "fraction", "n_seeds", "mean_bleu", "mean_err")
        w = csv.DictWriter(fh, fieldnames=fields_, lineterminator="\n")
        w.writeheader()
        for row in result["summary"]:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    paths["runs"].write_text(json.dumps(result["runs"], indent=1, sort_keys=True) + "\n")
    manifest = {"config": result["config"], "config_hash": result["config_hash"],
                "files": {k: p.name for k, p in paths.items() if k != "manifest"},
                "x_axis": "fraction (plot on a log scale)"}
    paths["manifest"].write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return paths
