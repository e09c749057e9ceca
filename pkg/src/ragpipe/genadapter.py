"""Generator contract: a builtin retrieval-copy baseline or an external command.

External generators speak line-delimited JSON over stdin/stdout::

    in:  {"id": "s1", "input": "[B0] 12 [SEP] 88 29 [SEP] 55 72"}
    out: {"id": "s1", "output": "55 72"}

Ids must come back in the same order; anything else is an error.
"""

from __future__ import annotations

import json
import os
import re
import shlex
import subprocess
from dataclasses import dataclass
from typing import Sequence

from .bucketer import apply_prompt, inference_prompt
from .corpus import Sample
from .kbstore import DEFAULT_MAX_INPUT
from .metrics import evaluate
from .vocab import SEP

BUILTIN_COPY = "builtin-copy"
EXTERNAL_COMMAND = "external-command"
DEFAULT_TIMEOUT = 600.0
_PROMPT = re.compile(r"^\[B\d+\]$")


class GeneratorError(RuntimeError):
    pass


@dataclass
class GeneratorContract:
    kind: str = BUILTIN_COPY
    command: str | None = None
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if self.kind not in (BUILTIN_COPY, EXTERNAL_COMMAND):
            raise GeneratorError(f"unknown generator kind {self.kind!r}")
        if self.kind == EXTERNAL_COMMAND and not self.command:
            raise GeneratorError("external-command generator requires a command")
        if not self.timeout > 0:
            raise GeneratorError(f"timeout must be positive, got {self.timeout}")

    @classmethod
    def from_cli(cls, value: str, timeout: float = DEFAULT_TIMEOUT) -> "GeneratorContract":
        """``builtin`` / ``builtin-copy`` or ``cmd:<command line>``."""
        if value in ("builtin", BUILTIN_COPY):
            return cls(timeout=timeout)
        if value.startswith("cmd:"):
            return cls(EXTERNAL_COMMAND, value[4:], timeout)
        raise GeneratorError(f"cannot parse generator spec {value!r}")


def copy_output(tokens: Sequence[str]) -> list[str]:
    """First retrieved segment of a rendered input, else the description."""
    toks = list(tokens)
    if toks and _PROMPT.match(toks[0]):
        toks = toks[1:]
    segments: list[list[str]] = [[]]
    for t in toks:
        if t == SEP:
            segments.append([])
        else:
            segments[-1].append(t)
    if len(segments) > 2 and segments[2]:
        return segments[2]
    return segments[1] if len(segments) > 1 else segments[0]


def _timeout(gc: GeneratorContract) -> float:
    env = os.environ.get("RAGPIPE_GEN_TIMEOUT")
    return float(env) if env else gc.timeout


def _run_external(inputs: Sequence[tuple[str, Sequence[str]]], gc: GeneratorContract) -> list[list[str]]:
    payload = "".join(json.dumps({"id": sid, "input": " ".join(toks)}) + "\n" for sid, toks in inputs)
    try:
        proc = subprocess.run(
            shlex.split(gc.command), input=payload, capture_output=True,
            text=True, timeout=_timeout(gc), check=False,
        )
    except subprocess.TimeoutExpired:
        raise GeneratorError(f"generator timed out after {_timeout(gc)}s") from None
    if proc.returncode != 0:
        raise GeneratorError(f"generator exited with {proc.returncode}: {proc.stderr.strip()[:500]}")
    lines = [line for line in proc.stdout.splitlines() if line.strip()]
    if len(lines) != len(inputs):
        raise GeneratorError(f"generator returned {len(lines)} records for {len(inputs)} inputs")
    outputs = []
    for k, (line, (sid, _)) in enumerate(zip(lines, inputs)):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            raise GeneratorError(f"generator record {k} is not JSON: {line[:200]!r}") from None
        if str(rec.get("id")) != sid:
            raise GeneratorError(f"generator record {k} has id {rec.get('id')!r}, expected {sid!r}")
        outputs.append(str(rec.get("output", "")).split())
    return outputs


def generate(inputs: Sequence[tuple[str, Sequence[str]]], gc: GeneratorContract) -> list[list[str]]:
    """One output token list per ``(id, input tokens)``, order-aligned."""
    if not inputs:
        raise GeneratorError("no inputs to generate from")
    if gc.kind == BUILTIN_COPY:
        return [copy_output(toks) for _, toks in inputs]
    return _run_external(inputs, gc)


def probe_score(val: Sequence[Sample], gc: GeneratorContract, max_len: int = DEFAULT_MAX_INPUT,
                n_buckets: int = 4) -> float:
    """Composite score of the generator on gold-labelled samples."""
    if not val:
        raise GeneratorError("probe needs a non-empty validation set")
    missing = [s.id for s in val if not s.diagnosis]
    if missing:
        raise GeneratorError(f"validation samples without gold diagnosis: {missing[:10]}")
    prompt = inference_prompt()
    inputs = [(s.id, apply_prompt(s, prompt, max_len=max_len, n_buckets=n_buckets)) for s in val]
    preds = generate(inputs, gc)
    golds = [[str(t) for t in s.diagnosis] for s in val]
    return evaluate([s.id for s in val], preds, golds).composite
