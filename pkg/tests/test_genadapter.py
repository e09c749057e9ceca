import json
import random
import sys

import pytest

from ragpipe.corpus import Sample
from ragpipe.genadapter import (
    BUILTIN_COPY, EXTERNAL_COMMAND, GeneratorContract, GeneratorError, copy_output, generate, probe_score,
)
from ragpipe.metrics import composite

PY = sys.executable


def _script(tmp_path, body, name="gen.py"):
    p = tmp_path / name
    p.write_text("import json, sys\n" + body)
    return GeneratorContract(EXTERNAL_COMMAND, f"{PY} {p}", timeout=60)


ECHO = "for line in sys.stdin:\n    r = json.loads(line)\n    print(json.dumps({'id': r['id'], 'output': r['input']}))\n"


def test_copy_semantics():
    assert copy_output("[B0] 9 [SEP] 1 2 [SEP] 7 8 [SEP] 5".split()) == ["7", "8"]
    assert copy_output("9 [SEP] 1 2".split()) == ["1", "2"]
    assert copy_output("[B2] [SEP] 1 2".split()) == ["1", "2"]


def test_contract_validation():
    with pytest.raises(GeneratorError):
        GeneratorContract(EXTERNAL_COMMAND, None)
    with pytest.raises(GeneratorError):
        GeneratorContract("neural", None)
    with pytest.raises(GeneratorError):
        GeneratorContract(BUILTIN_COPY, timeout=0)
    assert GeneratorContract.from_cli("builtin").kind == BUILTIN_COPY
    gc = GeneratorContract.from_cli('cmd:python my_model.py --beam 4')
    assert gc.kind == EXTERNAL_COMMAND and gc.command == "python my_model.py --beam 4"
    with pytest.raises(GeneratorError):
        GeneratorContract.from_cli("gpt")


def test_generate_empty():
    with pytest.raises(GeneratorError):
        generate([], GeneratorContract())


def test_echo_loopback_10k(tmp_path):
    rnd = random.Random(0)
    inputs = [(f"r{i}", [str(rnd.randrange(1000)) for _ in range(rnd.randrange(1, 30))]) for i in range(10_000)]
    out = generate(inputs, _script(tmp_path, ECHO))
    assert out == [toks for _, toks in inputs]


@pytest.mark.parametrize("body,match", [
    ("sys.stdin.read(); sys.exit(3)\n", "exited with 3"),
    ("sys.stdin.read(); print(json.dumps({'id': 'a', 'output': '1'}))\n", "1 records for 2"),
    ("sys.stdin.read()\nfor i in ('b', 'a'): print(json.dumps({'id': i, 'output': '1'}))\n", "expected 'a'"),
    ("sys.stdin.read(); print('x'); print('y')\n", "not JSON"),
])
def test_external_errors(tmp_path, body, match):
    with pytest.raises(GeneratorError, match=match):
        generate([("a", ["1"]), ("b", ["2"])], _script(tmp_path, body))


def test_timeout_env_override(tmp_path, monkeypatch):
    gc = _script(tmp_path, "import time\ntime.sleep(5)\n")
    monkeypatch.setenv("RAGPIPE_GEN_TIMEOUT", "0.3")
    with pytest.raises(GeneratorError, match="timed out"):
        generate([("a", ["1"])], gc)


def _twins(n=12):
    rnd = random.Random(3)
    out = []
    for i in range(n):
        diag = tuple(rnd.randrange(50) for _ in range(rnd.randrange(4, 9)))
        desc = tuple(rnd.randrange(50) for _ in range(6))
        out.append(Sample(f"v{i}", desc, (), diag, retrieved=[diag]))
    return out


def test_probe_twin_corpus_is_perfect():
    score = probe_score(_twins(), GeneratorContract())
    assert score == pytest.approx(composite(10.0, 1.0), abs=1e-9)


def test_probe_deterministic_and_uses_best_prompt(tmp_path):
    val = _twins()
    assert probe_score(val, GeneratorContract()) == probe_score(val, GeneratorContract())
    seen = tmp_path / "seen.txt"
    body = (f"rows = [json.loads(l) for l in sys.stdin]\nopen({str(seen)!r}, 'w').write(json.dumps(rows))\n"
            "for r in rows: print(json.dumps({'id': r['id'], 'output': r['input'].split(' [SEP] ')[-1]}))\n")
    assert probe_score(val, _script(tmp_path, body)) == pytest.approx(composite(10.0, 1.0), abs=1e-9)
    assert all(r["input"].startswith("[B0] ") for r in json.loads(seen.read_text()))


def test_probe_errors():
    with pytest.raises(GeneratorError):
        probe_score([], GeneratorContract())
    with pytest.raises(GeneratorError, match="gold"):
        probe_score([Sample("a", (1,))], GeneratorContract())
