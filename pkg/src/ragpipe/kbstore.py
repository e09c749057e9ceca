"""Key-value retrieval knowledge base and retrieval augmentation.

Keys are unit-norm description embeddings, values are gold diagnoses. Lookup
is an exact scan: the argmax-cosine pair is returned when it clears the
threshold, ties going to the lexicographically smallest source id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Sample, TokenSeq, parse_tokens, render_tokens
from .embedder import EmbedderSpec, embed_many, fit
from .vocab import SEP

DEFAULT_THRESHOLD = 0.5
DEFAULT_MAX_INPUT = 512
_BLOCK = 1024


class KBError(ValueError):
    pass


@dataclass
class KVPair:
    source_id: str
    key: np.ndarray
    value: TokenSeq


@dataclass
class KnowledgeBase:
    pairs: list[KVPair]
    embedder_fingerprint: str = ""
    iteration: int = 0
    keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.pairs:
            raise KBError("knowledge base is empty")
        self.pairs = sorted(self.pairs, key=lambda p: p.source_id)
        ids = [p.source_id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise KBError("duplicate source ids in knowledge base")
        dims = {p.key.shape for p in self.pairs}
        if len(dims) != 1:
            raise KBError(f"keys have mixed dimensions {sorted(dims)}")
        self.keys = np.vstack([p.key for p in self.pairs]).astype(np.float64)
        self._row = {sid: i for i, sid in enumerate(ids)}

    @property
    def dimension(self) -> int:
        return self.keys.shape[1]

    def __len__(self) -> int:
        return len(self.pairs)

    def row_of(self, source_id: str) -> int | None:
        return self._row.get(source_id)


@dataclass
class RetrievalResult:
    matched: tuple[str, float, TokenSeq] | None
    threshold: float


def build_kb(
    train: Sequence[Sample],
    spec: EmbedderSpec | None = None,
    vectors: Mapping[str, np.ndarray] | None = None,
    iteration: int = 0,
    fingerprint: str | None = None,
) -> KnowledgeBase:
    """One key-value pair per training sample.

    Keys come from ``vectors`` (external embeddings keyed by id) when given,
    else from embedding each description with the fitted ``spec``.
    """
    if not train:
        raise KBError("cannot build a knowledge base from an empty training set")
    for s in train:
        if not s.diagnosis:
            raise KBError(f"training sample {s.id!r} has no diagnosis")
    if vectors is not None:
        keys = _lookup_vectors(vectors, [s.id for s in train])
        fp = fingerprint or "external"
    elif spec is not None:
        keys = embed_many([s.description for s in train], spec)
        fp = fingerprint or spec.fingerprint()
    else:
        raise KBError("need either a fitted embedder spec or external vectors")
    pairs = [KVPair(s.id, k, s.diagnosis) for s, k in zip(train, keys)]
    return KnowledgeBase(pairs, embedder_fingerprint=fp, iteration=iteration)


def _lookup_vectors(vectors: Mapping[str, np.ndarray], ids: Sequence[str]) -> np.ndarray:
    missing = [i for i in ids if i not in vectors]
    if missing:
        shown = ", ".join(missing[:10])
        raise KBError(f"external embeddings missing {len(missing)} ids: {shown}")
    return np.vstack([vectors[i] for i in ids]).astype(np.float64)


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    header = {
        "dimension": kb.dimension,
        "iteration": kb.iteration,
        "embedder_fingerprint": kb.embedder_fingerprint,
        "count": len(kb),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for p in kb.pairs:
            rec = {"source_id": p.source_id, "key": [float(x) for x in p.key], "value": render_tokens(p.value)}
            fh.write(json.dumps(rec) + "\n")


def load_kb(path: str | Path) -> KnowledgeBase:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        pairs = []
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                pairs.append(KVPair(rec["source_id"], np.asarray(rec["key"], dtype=np.float64), parse_tokens(rec["value"])))
    if len(pairs) != header["count"]:
        raise KBError(f"{path}: header count {header['count']} != {len(pairs)} pairs")
    return KnowledgeBase(pairs, header["embedder_fingerprint"], header["iteration"])


def retrieve_many(
    queries: np.ndarray,
    kb: KnowledgeBase,
    threshold: float,
    exclude_ids: Sequence[str | None] | None = None,
) -> list[RetrievalResult]:
    """Blocked exact scan for a batch of query vectors (one per row)."""
    if not -1.0 <= threshold <= 1.0:
        raise KBError(f"threshold {threshold} outside [-1, 1]")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != kb.dimension:
        raise KBError(f"query dimension {queries.shape[1]} != KB dimension {kb.dimension}")
    if exclude_ids is None:
        exclude_ids = [None] * len(queries)
    results: list[RetrievalResult] = []
    for lo in range(0, len(queries), _BLOCK):
        block = queries[lo:lo + _BLOCK]
        # cosine of unit/zero vectors; rescale in case a caller passes raw vectors
        norms = np.linalg.norm(block, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        sims = (block @ kb.keys.T) / safe[:, None]
        for r, ex in enumerate(exclude_ids[lo:lo + _BLOCK]):
            row = sims[r]
            if ex is not None and (j := kb.row_of(ex)) is not None:
                row[j] = -np.inf
            best = int(np.argmax(row))
            sim = float(row[best])
            if np.isfinite(sim) and sim >= threshold:
                p = kb.pairs[best]
                results.append(RetrievalResult((p.source_id, sim, p.value), threshold))
            else:
                results.append(RetrievalResult(None, threshold))
    return results


def retrieve(
    query: np.ndarray,
    kb: KnowledgeBase,
    threshold: float = DEFAULT_THRESHOLD,
    exclude_id: str | None = None,
) -> RetrievalResult:
    return retrieve_many(np.asarray(query)[None, :], kb, threshold, [exclude_id])[0]


def render_input(s: Sample, max_len: int = DEFAULT_MAX_INPUT) -> list[str]:
    """``C [SEP] D [SEP] r1 [SEP] r2 ...`` within ``max_len`` tokens.

    Oldest retrieved values are dropped first; if clinical plus description
    alone overflow, the tail is cut.
    """
    head = [str(t) for t in s.clinical] + [SEP] + [str(t) for t in s.description]
    retrieved = list(s.retrieved)

    def length(rs: list[TokenSeq]) -> int:
        return len(head) + sum(len(r) + 1 for r in rs)

    while retrieved and length(retrieved) > max_len:
        retrieved.pop(0)
    out = list(head)
    for r in retrieved:
        out.append(SEP)
        out.extend(str(t) for t in r)
    return out[:max_len]


def augment(
    samples: Sequence[Sample],
    kb: KnowledgeBase,
    threshold: float = DEFAULT_THRESHOLD,
    spec: EmbedderSpec | None = None,
    vectors: Mapping[str, np.ndarray] | None = None,
    exclude_self: bool = False,
    max_retrieved: int | None = None,
) -> list[Sample]:
    """Append the effective retrieval (if any) for each sample's description.

    Training samples should pass ``exclude_self=True`` so they never retrieve
    their own gold diagnosis. Samples without a match are returned unchanged.
    """
    if not samples:
        return []
    if vectors is not None:
        queries = _lookup_vectors(vectors, [s.id for s in samples])
    elif spec is not None:
        queries = embed_many([s.description for s in samples], spec)
    else:
        raise KBError("need either a fitted embedder spec or external vectors")
    excludes = [s.id if exclude_self else None for s in samples]
    out = []
    for s, res in zip(samples, retrieve_many(queries, kb, threshold, excludes)):
        if res.matched is None or (max_retrieved is not None and len(s.retrieved) >= max_retrieved):
            out.append(s)
        else:
            out.append(replace(s, retrieved=s.retrieved + [res.matched[2]]))
    return out


def fit_builtin(train: Sequence[Sample], template: EmbedderSpec | None = None) -> EmbedderSpec:
    """Fit the builtin embedder on training descriptions and diagnoses."""
    docs = [s.description for s in train] + [s.diagnosis for s in train if s.diagnosis]
    return fit(docs, template)


@dataclass
class IterationOutput:
    iteration: int
    kb: KnowledgeBase
    spec: EmbedderSpec | None
    splits: dict[str, list[Sample]]


def iterate(
    train: Sequence[Sample],
    val: Sequence[Sample],
    threshold: float = DEFAULT_THRESHOLD,
    n_iters: int = 2,
    embed_source: Sequence[Mapping[str, np.ndarray]] | None = None,
    test: Sequence[Sample] | None = None,
    template: EmbedderSpec | None = None,
) -> list[IterationOutput]:
    """Repeated rebuild-and-augment passes.

    Each pass refits the builtin embedder (or takes the pass's external
    vectors from ``embed_source``), rebuilds the knowledge base from the gold
    training diagnoses and appends one more retrieval to every split.
    """
    if n_iters < 1:
        raise KBError("n_iters must be >= 1")
    if embed_source is not None and len(embed_source) < n_iters:
        raise KBError(f"need {n_iters} external embedding sets, got {len(embed_source)}")
    splits = {"train": list(train), "val": list(val)}
    if test is not None:
        splits["test"] = list(test)
    outputs = []
    for k in range(1, n_iters + 1):
        if embed_source is None:
            spec, vectors = fit_builtin(splits["train"], template), None
        else:
            spec, vectors = None, embed_source[k - 1]
        kb = build_kb(splits["train"], spec=spec, vectors=vectors, iteration=k)
        splits = {
            name: augment(samples, kb, threshold, spec=spec, vectors=vectors,
                          exclude_self=(name == "train"), max_retrieved=n_iters)
            for name, samples in splits.items()
        }
        outputs.append(IterationOutput(k, kb, spec, dict(splits)))
    return outputs
