"""Noise-aware similarity buckets and bucket-prompt tokens.

Each training sample is scored by how similar its input side (clinical,
description and retrieved diagnoses) is to its gold diagnosis. Samples are
split into ``n`` tiers, tier 0 being the most similar, and the tier's prompt
token is prepended to the model input. At inference every input gets tier 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .corpus import Sample
from .embedder import EmbedderSpec, cosine, embed
from .kbstore import DEFAULT_MAX_INPUT, render_input
from .vocab import BUCKET_LABELS, Vocabulary, bucket_token

EQUAL_FREQUENCY = "equal-frequency"
FIXED_THRESHOLDS = "fixed-thresholds"


class BucketError(ValueError):
    pass


@dataclass
class BucketConfig:
    n_buckets: int = 4
    mode: str = EQUAL_FREQUENCY
    boundaries: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.n_buckets < 2:
            raise BucketError("n_buckets must be >= 2")
        if self.mode not in (EQUAL_FREQUENCY, FIXED_THRESHOLDS):
            raise BucketError(f"unknown bucket mode {self.mode!r}")
        if self.mode == FIXED_THRESHOLDS:
            b = self.boundaries
            if len(b) != self.n_buckets - 1:
                raise BucketError(f"fixed-thresholds mode needs {self.n_buckets - 1} boundaries")
            if any(x <= y for x, y in zip(b, b[1:])):
                raise BucketError("boundaries must be strictly decreasing")


@dataclass(frozen=True)
class BucketAssignment:
    sample_id: str
    similarity: float
    bucket: int


def bucket_label(i: int) -> str:
    return BUCKET_LABELS[i] if i < len(BUCKET_LABELS) else f"bucket {i}"


def io_similarity(s: Sample, spec: EmbedderSpec) -> float:
    """Cosine between embed(C + D + retrieved...) and embed(O)."""
    if not s.diagnosis:
        raise BucketError(f"sample {s.id!r} has no gold diagnosis")
    inp = list(s.clinical) + list(s.description)
    for r in s.retrieved:
        inp.extend(r)
    return cosine(embed(inp, spec), embed(s.diagnosis, spec))


def assign_buckets(
    sims: Sequence[tuple[str, float]], cfg: BucketConfig
) -> tuple[list[BucketAssignment], list[float]]:
    """Bucket every (id, similarity); returns assignments in input order.

    Equal-frequency mode ranks by (similarity desc, id asc) and cuts the
    ranking into ``n`` runs whose sizes differ by at most one (the first
    ``N mod n`` runs take the extra item). The returned boundaries are the
    lowest similarity in each of the first ``n - 1`` buckets; with ties
    across a cut they need not be strictly decreasing.
    """
    n = cfg.n_buckets
    if cfg.mode == FIXED_THRESHOLDS:
        bounds = list(cfg.boundaries)
        out = []
        for sid, sim in sims:
            b = next((i for i, cut in enumerate(bounds) if sim >= cut), n - 1)
            out.append(BucketAssignment(sid, float(sim), b))
        return out, bounds

    if len(sims) < n:
        raise BucketError(f"need at least {n} samples for {n} buckets, got {len(sims)}")
    ids = [sid for sid, _ in sims]
    if len(set(ids)) != len(ids):
        raise BucketError("duplicate sample ids")
    ranked = sorted(sims, key=lambda x: (-x[1], x[0]))
    q, r = divmod(len(ranked), n)
    bucket_of: dict[str, int] = {}
    bounds: list[float] = []
    pos = 0
    for b in range(n):
        size = q + (1 if b < r else 0)
        for sid, _ in ranked[pos:pos + size]:
            bucket_of[sid] = b
        pos += size
        if b < n - 1:
            bounds.append(float(ranked[pos - 1][1]))
    return [BucketAssignment(sid, float(sim), bucket_of[sid]) for sid, sim in sims], bounds


def apply_prompt(s: Sample, bucket: int, v: Vocabulary | None = None,
                 max_len: int = DEFAULT_MAX_INPUT, n_buckets: int | None = None) -> list[str]:
    """Prepend the bucket token to the rendered input.

    The token sits outside the ``max_len`` budget so dropping it always gives
    back ``render_input(s, max_len)``.
    """
    limit = v.n_buckets if v is not None else n_buckets
    if limit is None:
        raise BucketError("need a vocabulary or n_buckets to validate the bucket")
    if not 0 <= bucket < limit:
        raise BucketError(f"bucket {bucket} out of range [0, {limit})")
    token = v.render(v.bucket_id(bucket)) if v is not None else bucket_token(bucket)
    return [token] + render_input(s, max_len)


def inference_prompt(cfg: BucketConfig | None = None) -> int:
    return 0
