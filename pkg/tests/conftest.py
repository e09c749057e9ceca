import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=100, deadline=None)
settings.register_profile("ci", max_examples=300, deadline=None)
settings.load_profile("default")


@pytest.fixture
def synth_corpus(tmp_path):
    """Writes a synthetic corpus and returns its path; call with (n, seed, noise)."""
    from ragpipe.corpus import write_corpus
    from ragpipe.synth import make_synthetic_corpus

    def make(n=200, seed=1, noise=0.1, name="synth.jsonl"):
        samples, meta = make_synthetic_corpus(n, seed, noise)
        path = tmp_path / name
        write_corpus(path, samples, meta=meta)
        return path

    return make


def write_config(directory: Path, corpus: str = "synth.jsonl", **sections) -> Path:
    """Minimal TOML writer for pipeline configs in tests."""
    import json

    body = {"paths": {"corpus": corpus, "out_dir": "run"}}
    for name, values in sections.items():
        body.setdefault(name, {}).update(values)
    lines = []
    for name, values in body.items():
        lines.append(f"[{name}]")
        for k, v in values.items():
            lines.append(f"{k} = {json.dumps(v)}")
    path = directory / "run.toml"
    path.write_text("\n".join(lines) + "\n")
    return path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
