"""Desensitized sample corpora: parsing, persistence and train/val splitting.

A corpus file holds one JSON record per line::

    {"id": "s1", "clinical": "", "description": "88 29 17", "diagnosis": "55 72"}

Token fields are space-separated decimal token ids. ``retrieved`` (list of
token strings) and ``bucket`` (int) are optional and written by the
augmentation and bucketing stages. An optional first line of the form
``{"__meta__": {...}}`` carries corpus statistics and is not a sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .hashing import seeded_hash

TokenSeq = tuple[int, ...]

META_KEY = "__meta__"


class CorpusError(ValueError):
    pass


def parse_tokens(text: str) -> TokenSeq:
    """Parse space-separated decimal ids; runs of whitespace collapse."""
    out = []
    for tok in text.split():
        if not tok.isdigit():
            raise CorpusError(f"non-integer token {tok!r}")
        out.append(int(tok))
    return tuple(out)


def render_tokens(seq: Iterable) -> str:
    return " ".join(str(t) for t in seq)


@dataclass
class Sample:
    id: str
    description: TokenSeq
    clinical: TokenSeq = ()
    diagnosis: TokenSeq = ()
    retrieved: list[TokenSeq] = field(default_factory=list)
    bucket: int | None = None

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "clinical": render_tokens(self.clinical),
            "description": render_tokens(self.description),
            "diagnosis": render_tokens(self.diagnosis),
        }
        if self.retrieved:
            rec["retrieved"] = [render_tokens(r) for r in self.retrieved]
        if self.bucket is not None:
            rec["bucket"] = self.bucket
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Sample":
        if not isinstance(rec, dict):
            raise CorpusError("record is not an object")
        if "id" not in rec or "description" not in rec:
            raise CorpusError("record lacks required 'id' or 'description'")
        description = parse_tokens(rec["description"])
        if not description:
            raise CorpusError(f"empty description for id {rec['id']!r}")
        bucket = rec.get("bucket")
        if bucket is not None and (not isinstance(bucket, int) or isinstance(bucket, bool)):
            raise CorpusError(f"bucket must be an integer, got {bucket!r}")
        return cls(
            id=str(rec["id"]),
            description=description,
            clinical=parse_tokens(rec.get("clinical") or ""),
            diagnosis=parse_tokens(rec.get("diagnosis") or ""),
            retrieved=[parse_tokens(r) for r in rec.get("retrieved") or []],
            bucket=bucket,
        )


def parse_corpus(path: str | Path) -> list[Sample]:
    """Read a corpus file, validating every line and id uniqueness."""
    samples: list[Sample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if lineno == 1 and isinstance(rec, dict) and META_KEY in rec:
                    continue
                sample = Sample.from_record(rec)
            except (json.JSONDecodeError, CorpusError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            if sample.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {sample.id!r}")
            seen.add(sample.id)
            samples.append(sample)
    return samples


def read_corpus_meta(path: str | Path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        rec = json.loads(first)
    except json.JSONDecodeError:
        return None
    return rec.get(META_KEY) if isinstance(rec, dict) else None


def write_corpus(path: str | Path, samples: Iterable[Sample], meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({META_KEY: meta}, sort_keys=True) + "\n")
        for s in samples:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class SplitAssignment:
    train_ids: frozenset[str]
    val_ids: frozenset[str]
    seed: int


def split_corpus(samples: list[Sample], ratio: float | Fraction, seed: int) -> SplitAssignment:
    """Seeded per-id split into train/val.

    Ids are ranked by FNV-1a(seed || id); the lowest ``round(N * (1 - ratio))``
    go to validation. The result depends only on the id set and the seed, so
    reordering the corpus never changes it, and adding or removing ids moves
    at most one existing id across the cut per id changed.
    """
    ratio = Fraction(ratio).limit_denominator(10**9) if isinstance(ratio, float) else Fraction(ratio)
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {float(ratio)}")
    if not samples:
        raise ValueError("cannot split an empty corpus")
    ids = [s.id for s in samples]
    n_val = math.floor(len(ids) * (1 - ratio) + Fraction(1, 2))
    ranked = sorted(ids, key=lambda i: (seeded_hash(seed, i), i))
    val = frozenset(ranked[:n_val])
    return SplitAssignment(train_ids=frozenset(ids) - val, val_ids=val, seed=seed)


def apply_split(samples: list[Sample], assignment: SplitAssignment) -> tuple[list[Sample], list[Sample]]:
    train = [s for s in samples if s.id in assignment.train_ids]
    val = [s for s in samples if s.id in assignment.val_ids]
    return train, val
