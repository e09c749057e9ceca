"""CIDEr-consensus fusion of several models' predictions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .metrics import CIDER_D, DocFreq, cider_pair


class EnsembleError(ValueError):
    pass


@dataclass
class CandidateSet:
    sample_id: str
    candidates: list[tuple[str, ...]]
    model_names: list[str]


def candidate_doc_freq(sets: Sequence[CandidateSet]) -> DocFreq:
    """Document frequencies with every candidate of every sample as a document."""
    return DocFreq(c for cs in sets for c in cs.candidates)


def fuse(cs: CandidateSet, df: DocFreq, variant: str = CIDER_D) -> tuple[tuple[str, ...], list[float]]:
    """Pick the candidate with the highest summed CIDEr against the others.

    Ties go to the earliest registered model.
    """
    n = len(cs.candidates)
    if n == 0:
        raise EnsembleError(f"sample {cs.sample_id!r} has no candidates")
    scores = [0.0] * n
    for i in range(n):
        for j in range(n):
            if i != j:
                scores[i] += cider_pair(cs.candidates[i], cs.candidates[j], df, variant)
    best = max(range(n), key=lambda i: (scores[i], -i))
    return cs.candidates[best], scores


def read_predictions(path: str | Path) -> dict[str, tuple[str, ...]]:
    """``{"id", "output"}`` records keyed by id."""
    out: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            sid = str(rec["id"])
            if sid in out:
                raise EnsembleError(f"{path}:{lineno}: duplicate id {sid!r}")
            out[sid] = tuple(rec["output"].split())
    return out


def write_predictions(path: str | Path, preds: Sequence[tuple[str, Sequence[str]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, toks in preds:
            fh.write(json.dumps({"id": sid, "output": " ".join(toks)}) + "\n")


def fuse_corpus(per_model: Sequence[dict[str, tuple[str, ...]]], model_names: Sequence[str] | None = None,
                variant: str = CIDER_D,
                df_documents: Sequence[Sequence[str]] | None = None) -> list[tuple[str, tuple[str, ...]]]:
    """Fuse id-aligned prediction maps; output sorted by id.

    Document frequencies come from all candidates unless ``df_documents``
    (for instance the training diagnoses) is given.
    """
    if not per_model:
        raise EnsembleError("no prediction sets to fuse")
    names = list(model_names) if model_names else [f"model{i}" for i in range(len(per_model))]
    all_ids = set().union(*(p.keys() for p in per_model))
    problems = []
    for name, preds in zip(names, per_model):
        missing = sorted(all_ids - preds.keys())
        if missing:
            problems.append(f"{name} missing {', '.join(missing[:10])}" + (" ..." if len(missing) > 10 else ""))
    if problems:
        raise EnsembleError("prediction id sets differ: " + "; ".join(problems))
    sets = [CandidateSet(sid, [p[sid] for p in per_model], names) for sid in sorted(all_ids)]
    if df_documents is not None:
        if not df_documents:
            raise EnsembleError("df_documents is empty")
        df = DocFreq(tuple(str(t) for t in d) for d in df_documents)
    else:
        df = candidate_doc_freq(sets)
    return [(cs.sample_id, fuse(cs, df, variant)[0]) for cs in sets]


def fuse_files(paths: Sequence[str | Path], out: str | Path, variant: str = CIDER_D,
               df_documents: Sequence[Sequence[str]] | None = None) -> None:
    per_model = [read_predictions(p) for p in paths]
    write_predictions(out, fuse_corpus(per_model, [str(p) for p in paths], variant, df_documents))
