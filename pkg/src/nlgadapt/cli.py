"""Command-line entry point: ``nlgadapt <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (ParseError, disjoint_domains, generate_synthetic, load_corpus, save_corpus,
                     similar_domains)
from .counterfeit import CounterfeitPlan, counterfeit_corpus
from .decoder import RerankConfig, rerank
from .dialogue_act import DAFeatureSpace, DialogueAct, Ontology, lexicalise
from .dt import DTConfig, dt_finetune
from .evaluation import evaluate_generator, split_3_1_1
from .recipes import RecipeConfig, sweep, write_sweep
from .sclstm import Generator, TrainConfig, config_hash, gradient_check, train_ml
from .vocab import Vocabulary

log = logging.getLogger("nlgadapt")


def write_manifest(path: Path, command: str, args: argparse.Namespace, outputs: dict,
                   extra: dict | None = None) -> Path:
    """Record what produced ``outputs`` next to them."""
    argv = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {"command": command, "version": __version__, "args": argv,
                "args_hash": config_hash(argv), "outputs": outputs, **(extra or {})}
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n")
    return path


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("hidden", "lr", "max_epochs")
                 if getattr(args, k, None) is not None}
    return cfg.replace(seed=args.seed, **overrides)


def _load_any(path, onts: list[Ontology]):
    """Load a corpus under the first ontology that accepts every line."""
    err = None
    for o in onts:
        try:
            return load_corpus(path, o)
        except ParseError as exc:
            err = exc
    raise err


def _holdout(instances, seed):
    """Train/valid parts of a 3:1:1 split; tiny corpora validate on themselves."""
    if len(instances) >= 5:
        train, valid, _ = split_3_1_1(instances, seed)
        return train, valid
    return list(instances), list(instances)


# --------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    make = similar_domains if args.kind == "similar" else disjoint_domains
    kw = {}
    if args.source_size is not None:
        kw["source_size"] = args.source_size
    if args.target_size is not None:
        kw["target_size"] = args.target_size
    spec = make(seed=args.seed, **kw)
    paths = generate_synthetic(spec).write(args.out)
    write_manifest(Path(args.out) / "manifest.json", "synth", args,
                   {k: p.name for k, p in paths.items()}, {"synth_spec": spec.to_dict()})
    print(json.dumps({k: str(p) for k, p in paths.items()}, indent=1))
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    ont = Ontology.load(args.ontology)
    extra_onts = [Ontology.load(p) for p in args.extra_ontology]
    data = load_corpus(args.corpus, ont)
    vocab_sents = [x.delex_tokens for x in data]
    for path in args.extra_corpus:
        vocab_sents += [x.delex_tokens for x in _load_any(path, [ont, *extra_onts])]
    vocab = Vocabulary.build(vocab_sents, extra=[t for o in [ont, *extra_onts]
                                                 for t in o.slot_tokens()])
    space = DAFeatureSpace.from_ontology(ont, *extra_onts)
    if args.valid:
        train, valid = data, load_corpus(args.valid, ont)
    else:
        train, valid = _holdout(data, args.seed)
    rng = np.random.default_rng([args.seed, 0])
    gen = Generator.create(vocab, space, cfg.hidden, rng, cfg.init_scale,
                           config={"train": asdict(cfg), "seed": args.seed})
    res = train_ml(gen.examples(train), gen.params, cfg, gen.examples(valid),
                   np.random.default_rng([args.seed, 1]))
    out = Path(args.out)
    gen.with_params(res.params).save(out)
    write_manifest(_manifest_path(out), "train", args, {"model": out.name},
                   {"best_epoch": res.best_epoch, "best_valid_cost": res.best_valid,
                    "history": res.history})
    print(json.dumps({"model": str(out), "best_epoch": res.best_epoch,
                      "best_valid_cost": res.best_valid}))
    return 0


def cmd_counterfeit(args) -> int:
    src_ont, tgt_ont = Ontology.load(args.source_ont), Ontology.load(args.target_ont)
    source = load_corpus(args.source, src_ont)
    plan = CounterfeitPlan.build(src_ont, tgt_ont, distinct=args.distinct_slots)
    out = Path(args.out)
    save_corpus(counterfeit_corpus(source, plan, args.seed), out)
    write_manifest(_manifest_path(out), "counterfeit", args, {"corpus": out.name})
    print(json.dumps({"corpus": str(out), "instances": len(source)}))
    return 0


def cmd_adapt(args) -> int:
    base = Generator.load(args.model)
    cfg = _train_config(args)
    cfg = cfg.replace(lr=(args.lr if args.lr is not None else cfg.lr * args.lr_scale))
    ont = Ontology.load(args.ontology)
    data = load_corpus(args.corpus, ont)
    train, valid = (data, load_corpus(args.valid, ont)) if args.valid else _holdout(data, args.seed)
    res = train_ml(base.examples(train), base.params, cfg, base.examples(valid),
                   np.random.default_rng([args.seed, 2]))
    out = Path(args.out)
    gen = base.with_params(res.params)
    gen.config = {**base.config, "adapt": asdict(cfg)}
    gen.save(out)
    write_manifest(_manifest_path(out), "adapt", args, {"model": out.name},
                   {"best_epoch": res.best_epoch, "history": res.history})
    print(json.dumps({"model": str(out), "best_epoch": res.best_epoch}))
    return 0


def _parse_betas(items) -> dict[str, float]:
    if not items:
        return {"bleu": 1.0, "err": -1.0}
    betas = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--beta expects name=value, got {item!r}")
        betas[name.strip()] = float(value)
    return betas


def cmd_dt_finetune(args) -> int:
    gen = Generator.load(args.model)
    ont = Ontology.load(args.ontology)
    data = load_corpus(args.corpus, ont)
    valid = load_corpus(args.valid, ont) if args.valid else None
    cfg = DTConfig(gamma=args.gamma, betas=_parse_betas(args.beta), n_samples=args.samples,
                   lr=args.lr, epochs=args.epochs)
    res = dt_finetune(data, gen, cfg, seed=args.seed, valid=valid)
    out = Path(args.out)
    new = gen.with_params(res.params)
    new.config = {**gen.config, "dt": cfg.to_dict()}
    new.save(out)
    write_manifest(_manifest_path(out), "dt-finetune", args, {"model": out.name},
                   {"dt": cfg.to_dict(), "best_epoch": res.best_epoch, "history": res.history})
    print(json.dumps({"model": str(out), "best_epoch": res.best_epoch, "history": res.history}))
    return 0


def cmd_generate(args) -> int:
    gen = Generator.load(args.model)
    da = DialogueAct.parse(args.da)
    cfg = RerankConfig(n_over=max(args.n_over, args.k), top_k=args.k)
    ranked = rerank(da, gen, cfg, np.random.default_rng(args.seed))
    out = [{"text": lexicalise(rc.tokens, da, strict=False), "delex": " ".join(rc.tokens),
            "R": rc.score, "err": rc.err} for rc in ranked]
    print(json.dumps(out, indent=1))
    return 0


def cmd_evaluate(args) -> int:
    gen = Generator.load(args.model)
    ont = Ontology.load(args.ontology)
    test = load_corpus(args.test, ont)
    cfg = RerankConfig(n_over=max(args.n_over, args.k), top_k=args.k)
    report = evaluate_generator(gen, test, cfg, np.random.default_rng(args.seed))
    summary = {"bleu4": report.bleu4, "err": report.err, "n_das": report.n_das}
    if args.out:
        out = Path(args.out)
        out.write_text(json.dumps(report.to_dict(), indent=1) + "\n")
        write_manifest(_manifest_path(out), "evaluate", args, {"report": out.name}, summary)
    print(json.dumps(summary))
    return 0


def cmd_sweep(args) -> int:
    cfg = RecipeConfig.load(args.config) if args.config else RecipeConfig()
    if args.seeds is not None:
        cfg.seeds = tuple(range(1, args.seeds + 1))
    if args.fractions:
        cfg.fractions = tuple(args.fractions)
    if args.regimes:
        cfg.regimes = tuple(args.regimes)
    cfg.__post_init__()
    t0 = time.perf_counter()
    result = sweep(cfg)
    paths = write_sweep(result, args.out)
    print(json.dumps({"summary": result["summary"], "files": {k: str(p) for k, p in paths.items()},
                      "seconds": round(time.perf_counter() - t0, 1)}, indent=1))
    return 0


def cmd_gradcheck(args) -> int:
    errors = gradient_check(n_configs=args.configs, seed=args.seed)
    worst = max(errors)
    ok = worst < args.tol
    print(json.dumps({"configs": len(errors), "max_relative_error": worst, "tolerance": args.tol,
                      "ok": ok}))
    return 0 if ok else 1


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--config", help="JSON or TOML config file")
    common.add_argument("--log-level", default="WARNING")

    p = argparse.ArgumentParser(prog="nlgadapt", description="SC-LSTM generation with domain adaptation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("synth", cmd_synth, "write a synthetic source/target corpus pair")
    sp.add_argument("--out", required=True)
    sp.add_argument("--kind", choices=("similar", "disjoint"), default="similar")
    sp.add_argument("--source-size", type=int)
    sp.add_argument("--target-size", type=int)

    sp = add("train", cmd_train, "train a generator with maximum likelihood")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ontology", required=True)
    sp.add_argument("--valid")
    sp.add_argument("--extra-ontology", action="append", default=[],
                    help="other domains to include in the DA feature space")
    sp.add_argument("--extra-corpus", action="append", default=[],
                    help="corpora whose words join the vocabulary (any known ontology)")
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--max-epochs", type=int)
    sp.add_argument("--out", required=True)

    sp = add("counterfeit", cmd_counterfeit, "rename source slots into the target ontology")
    sp.add_argument("--source", required=True)
    sp.add_argument("--source-ont", required=True)
    sp.add_argument("--target-ont", required=True)
    sp.add_argument("--distinct-slots", action="store_true",
                    help="never map two source slots of one DA to the same target slot")
    sp.add_argument("--out", required=True)

    sp = add("adapt", cmd_adapt, "fine-tune a trained generator on target data")
    sp.add_argument("--model", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ontology", required=True)
    sp.add_argument("--valid")
    sp.add_argument("--lr", type=float, help="absolute starting lr (overrides --lr-scale)")
    sp.add_argument("--lr-scale", type=float, default=0.5)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--max-epochs", type=int, default=200)
    sp.add_argument("--out", required=True)

    sp = add("dt-finetune", cmd_dt_finetune, "discriminative fine-tuning")
    sp.add_argument("--model", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--ontology", required=True)
    sp.add_argument("--valid")
    sp.add_argument("--gamma", type=float, default=5.0)
    sp.add_argument("--beta", action="append", metavar="NAME=VALUE",
                    help="scoring weight, repeatable (default bleu=1.0 err=-1.0)")
    sp.add_argument("--samples", type=int, default=50)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--epochs", type=int, default=3)
    sp.add_argument("--out", required=True)

    sp = add("generate", cmd_generate, "realise one dialogue act")
    sp.add_argument("--model", required=True)
    sp.add_argument("--da", required=True, help='e.g. \'inform(series=bravia;hasusbport=yes)\'')
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--n-over", type=int, default=20)

    sp = add("evaluate", cmd_evaluate, "BLEU-4 and slot error rate on a test corpus")
    sp.add_argument("--model", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--ontology", required=True)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--n-over", type=int, default=20)
    sp.add_argument("--out")

    sp = add("sweep", cmd_sweep, "regimes x fractions x seeds adaptation curves")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seeds", type=int, help="use seeds 1..N")
    sp.add_argument("--fractions", type=float, nargs="+")
    sp.add_argument("--regimes", nargs="+")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the BPTT gradients")
    sp.add_argument("--configs", type=int, default=20)
    sp.add_argument("--tol", type=float, default=1e-4)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
