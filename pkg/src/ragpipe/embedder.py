"""Deterministic hashed tf-idf embeddings and cosine similarity.

The builtin embedder stands in for a model's sentence embedding. Vectors from
an external model can be used instead via the exchange file format (one
``{"id": ..., "vector": [...]}`` record per line).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .hashing import fnv1a64, sha256_bytes

BUILTIN = "builtin-tfidf"
EXTERNAL = "external"
DEFAULT_DIM = 4096


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbedderSpec:
    kind: str = BUILTIN
    ngram_orders: tuple[int, ...] = (1, 2)
    dimension: int = DEFAULT_DIM
    df: dict[str, int] = field(default_factory=dict)
    n_docs: int = 0

    @property
    def fitted(self) -> bool:
        return self.n_docs > 0

    def idf(self, gram: str) -> float:
        d = self.df.get(gram)
        if d is None:
            return math.log(self.n_docs + 1)
        return math.log(self.n_docs / d)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "ngram_orders": list(self.ngram_orders),
            "dimension": self.dimension,
            "n_docs": self.n_docs,
            "df": dict(sorted(self.df.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderSpec":
        return cls(
            kind=d["kind"],
            ngram_orders=tuple(d["ngram_orders"]),
            dimension=int(d["dimension"]),
            df={k: int(v) for k, v in d["df"].items()},
            n_docs=int(d["n_docs"]),
        )

    def fingerprint(self) -> str:
        return sha256_bytes(json.dumps(self.to_dict(), sort_keys=True).encode())[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EmbedderSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def ngrams(seq: Sequence, orders: Iterable[int]) -> Counter:
    """Counts of n-grams keyed by their space-joined surface form."""
    toks = [str(t) for t in seq]
    out: Counter = Counter()
    for n in orders:
        for i in range(len(toks) - n + 1):
            out[" ".join(toks[i:i + n])] += 1
    return out


def fit(corpus: Sequence[Sequence], spec: EmbedderSpec | None = None) -> EmbedderSpec:
    """Document frequencies of every n-gram over ``corpus``."""
    spec = spec or EmbedderSpec()
    if not corpus:
        raise EmbeddingError("cannot fit an embedder on an empty corpus")
    df: Counter = Counter()
    for doc in corpus:
        df.update(ngrams(doc, spec.ngram_orders).keys())
    return EmbedderSpec(
        kind=spec.kind,
        ngram_orders=tuple(spec.ngram_orders),
        dimension=spec.dimension,
        df=dict(df),
        n_docs=len(corpus),
    )


@lru_cache(maxsize=1 << 18)
def _slot(gram: str, dimension: int) -> tuple[int, float]:
    index = fnv1a64(gram) % dimension
    sign = 1.0 if fnv1a64("sign\x00" + gram) & 1 else -1.0
    return index, sign


def normalize(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0 else np.zeros_like(v)


def embed(seq: Sequence, spec: EmbedderSpec) -> np.ndarray:
    """L2-normalized signed-hash tf-idf vector; zero vector for empty input."""
    if not spec.fitted:
        raise EmbeddingError("embedder spec is not fitted")
    v = np.zeros(spec.dimension, dtype=np.float64)
    for gram, tf in ngrams(seq, spec.ngram_orders).items():
        index, sign = _slot(gram, spec.dimension)
        v[index] += sign * tf * spec.idf(gram)
    return normalize(v)


def embed_many(seqs: Sequence[Sequence], spec: EmbedderSpec) -> np.ndarray:
    out = np.zeros((len(seqs), spec.dimension), dtype=np.float64)
    for i, s in enumerate(seqs):
        out[i] = embed(s, spec)
    return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(np.dot(a, b)) / (na * nb)))


def write_vectors(path: str | Path, ids: Sequence[str], vectors: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, v in zip(ids, vectors):
            fh.write(json.dumps({"id": i, "vector": [float(x) for x in v]}) + "\n")


def read_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Load an exchange file; vectors are L2-normalized on the way in."""
    out: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            v = np.asarray(rec["vector"], dtype=np.float64)
            if dim is None:
                dim = v.shape[0]
            elif v.shape[0] != dim:
                raise EmbeddingError(f"{path}:{lineno}: dimension {v.shape[0]} != {dim}")
            out[str(rec["id"])] = normalize(v)
    return out
