import json

import pytest

from conftest import write_config
from ragpipe.cli import EXIT_OK, EXIT_STAGE, EXIT_VALIDATION, main
from ragpipe.corpus import parse_corpus


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["synth", "--n", "120", "--seed", "1", "--noise", "0", "--out", "synth.jsonl"]) == EXIT_OK
    return tmp_path


def test_stepwise_commands(workdir, capsys):
    assert main(["split", "--in", "synth.jsonl", "--out-train", "train.jsonl", "--out-val", "val.jsonl"]) == 0
    assert "train=108 val=12" in capsys.readouterr().out
    toks = sorted({t for s in parse_corpus("synth.jsonl") for seq in (s.clinical, s.description, s.diagnosis)
                   for t in seq})
    (workdir / "new.txt").write_text("\n".join(map(str, toks)) + "\n")
    assert main(["vocab", "--new-tokens", "new.txt", "--out", "vocab.txt"]) == 0
    assert main(["pretrain-corpus", "--in", "train.jsonl", "--vocab", "vocab.txt", "--out", "dae.jsonl"]) == 0
    assert len((workdir / "dae.jsonl").read_text().splitlines()) == 108
    assert main(["embed", "--in", "train.jsonl", "--spec-out", "spec.json", "--out", "vec.jsonl"]) == 0
    assert main(["kb", "build", "--train", "train.jsonl", "--spec", "spec.json", "--out", "kb.jsonl"]) == 0
    first = parse_corpus("train.jsonl")[0]
    capsys.readouterr()
    text = " ".join(map(str, first.description))
    assert main(["kb", "query", "--kb", "kb.jsonl", "--spec", "spec.json", "--text", text]) == 0
    hit = json.loads(capsys.readouterr().out)
    assert hit["matched"]["source_id"] == first.id and hit["matched"]["similarity"] == pytest.approx(1.0)
    assert main(["augment", "--train", "train.jsonl", "--val", "val.jsonl", "--out-dir", "aug"]) == 0
    assert (workdir / "aug" / "val_aug2.jsonl").exists()
    assert main(["bucket", "--in", "aug/train_aug2.jsonl", "--out", "bucketed.jsonl",
                 "--boundaries-out", "bounds.json"]) == 0
    bounds = json.loads((workdir / "bounds.json").read_text())
    assert len(bounds["boundaries"]) == 3
    assert main(["generate", "--in", "aug/val_aug2.jsonl", "--out", "preds.jsonl"]) == 0
    assert main(["eval", "--pred", "preds.jsonl", "--gold", "val.jsonl", "--out", "report.json"]) == 0
    assert "bleu=1.0000" in capsys.readouterr().out
    assert main(["ensemble", "--pred", "preds.jsonl", "--pred", "preds.jsonl", "--out", "fused.jsonl"]) == 0
    assert (workdir / "fused.jsonl").read_bytes() == (workdir / "preds.jsonl").read_bytes()
    assert main(["ensemble", "--pred", "preds.jsonl", "--df-ref", "train.jsonl", "--out", "f2.jsonl"]) == 0


def test_schedule_commands(workdir, capsys):
    assert main(["schedule", "init", "--state", "s.json"]) == 0
    for score in (2.0, 1.5, 1.6, 1.0):
        assert main(["schedule", "step", "--state", "s.json", "--score", str(score)]) == 0
    capsys.readouterr()
    assert main(["schedule", "show", "--state", "s.json"]) == 0
    state = json.loads(capsys.readouterr().out)
    assert state["regressions"] == 2
    assert main(["schedule", "step", "--state", "s.json"]) == EXIT_VALIDATION


def test_run_exit_codes(workdir, capsys):
    write_config(workdir)
    assert main(["run", "--config", "run.toml"]) == EXIT_OK
    assert main(["run", "--config", "run.toml"]) == EXIT_OK
    assert capsys.readouterr().out.count("skipped") == 10
    write_config(workdir, retrieval={"threshold": 1.1})
    assert main(["run", "--config", "run.toml"]) == EXIT_VALIDATION
    (workdir / "bad.py").write_text("import sys\nsys.exit(5)\n")
    write_config(workdir, paths={"out_dir": "run2"},
                 generator={"kind": "external-command", "command": "python3 bad.py"})
    assert main(["run", "--config", "run.toml"]) == EXIT_STAGE
    assert "pretrain-corpus" in capsys.readouterr().err


def test_bad_input_exit_code(workdir, capsys):
    (workdir / "broken.jsonl").write_text('{"id": "a", "description": "1 x"}\n')
    assert main(["split", "--in", "broken.jsonl", "--out-train", "t", "--out-val", "v"]) == EXIT_VALIDATION
    assert "broken.jsonl:1" in capsys.readouterr().err
    assert main(["run", "--config", "missing.toml"]) == EXIT_VALIDATION


def test_module_entry_point(workdir):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "ragpipe", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "pretrain-corpus" in proc.stdout
