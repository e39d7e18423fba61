import json

import pytest

from nlgadapt.cli import build_parser, main


def _run(capsys, *argv):
    assert main(list(argv)) == 0
    return capsys.readouterr().out


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--source-size", "40", "--target-size", "30",
                 "--seed", "1"]) == 0
    return out


def test_parser_lists_every_command():
    p = build_parser()
    names = set(p._subparsers._group_actions[0].choices)
    assert names == {"synth", "train", "counterfeit", "adapt", "dt-finetune", "generate",
                     "evaluate", "sweep", "gradcheck"}
    args = p.parse_args(["gradcheck", "--seed", "3"])
    assert args.seed == 3 and args.configs == 20


def test_pipeline_end_to_end(corpus_dir, tmp_path, capsys):
    capsys.readouterr()
    d = corpus_dir
    lap, tv = d / "laptop.jsonl", d / "tv.jsonl"
    lap_ont, tv_ont = d / "laptop.ontology.json", d / "tv.ontology.json"
    assert json.loads((d / "manifest.json").read_text())["command"] == "synth"

    fake = tmp_path / "fake.jsonl"
    _run(capsys, "counterfeit", "--source", str(lap), "--source-ont", str(lap_ont),
         "--target-ont", str(tv_ont), "--distinct-slots", "--out", str(fake))
    assert len(fake.read_text().splitlines()) == 40

    model = tmp_path / "cf.json"
    out = _run(capsys, "train", "--corpus", str(fake), "--ontology", str(tv_ont),
               "--extra-ontology", str(lap_ont), "--extra-corpus", str(tv),
               "--hidden", "6", "--max-epochs", "2", "--out", str(model))
    assert json.loads(out)["model"] == str(model)
    manifest = json.loads((tmp_path / "cf.json.manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["args"]["hidden"] == 6

    adapted = tmp_path / "adapted.json"
    _run(capsys, "adapt", "--model", str(model), "--corpus", str(tv), "--ontology", str(tv_ont),
         "--max-epochs", "2", "--out", str(adapted))

    tuned = tmp_path / "dt.json"
    out = _run(capsys, "dt-finetune", "--model", str(adapted), "--corpus", str(tv),
               "--ontology", str(tv_ont), "--samples", "3", "--epochs", "1",
               "--beta", "bleu=1.0", "--beta", "err=-1.0", "--out", str(tuned))
    assert json.loads(out)["history"][0]["epoch"] == 0

    out = _run(capsys, "generate", "--model", str(tuned), "--da", "inform(series=bravia;hasusbport=yes)",
               "--k", "3", "--seed", "2")
    cands = json.loads(out)
    assert 1 <= len(cands) <= 3 and {"text", "delex", "R", "err"} <= set(cands[0])
    assert [c["R"] for c in cands] == sorted((c["R"] for c in cands), reverse=True)

    report = tmp_path / "report.json"
    out = _run(capsys, "evaluate", "--model", str(tuned), "--test", str(tv), "--ontology", str(tv_ont),
               "--k", "2", "--n-over", "3", "--out", str(report))
    summary = json.loads(out)
    full = json.loads(report.read_text())
    assert full["bleu4"] == summary["bleu4"] and len(full["details"]) == summary["n_das"]


def test_sweep_and_gradcheck(tmp_path, capsys):
    cfg = {"train": {"hidden": 4, "max_epochs": 1}, "finetune_max_epochs": 1,
           "rerank": {"n_over": 2, "top_k": 1, "max_len": 15}, "eval_limit": 3,
           "synth": None, "regimes": ["scratch", "tune"]}
    synth_dir = tmp_path / "data"
    main(["synth", "--out", str(synth_dir), "--source-size", "30", "--target-size", "30"])
    cfg.update(source_corpus=str(synth_dir / "laptop.jsonl"), target_corpus=str(synth_dir / "tv.jsonl"),
               source_ontology=str(synth_dir / "laptop.ontology.json"),
               target_ontology=str(synth_dir / "tv.ontology.json"))
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(cfg))
    capsys.readouterr()
    out = _run(capsys, "sweep", "--config", str(path), "--seeds", "1", "--fractions", "0.5", "1.0",
               "--out", str(tmp_path / "res"))
    assert len(json.loads(out)["summary"]) == 4
    assert len((tmp_path / "res" / "rows.csv").read_text().splitlines()) == 1 + 4
    out = _run(capsys, "gradcheck", "--configs", "2")
    assert json.loads(out)["ok"] is True
    assert main(["gradcheck", "--configs", "1", "--tol", "1e-30"]) == 1
