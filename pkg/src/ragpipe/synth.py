"""Synthetic desensitized corpora with learnable retrieval structure.

Samples are drawn from a pool of description templates. A sample's diagnosis
is a fixed token-level function of its description (``diagnosis_rule``), so
two samples with the same description always share a diagnosis. ``noise``
is the per-token probability of replacing a description token, and then a
diagnosis token, with a random one. At noise 0 every description has an
exact twin rule and a retrieval-copy generator is perfect.
"""

from __future__ import annotations

import statistics
from typing import Sequence

from .corpus import Sample, TokenSeq
from .hashing import SplitMix64

DESC_VOCAB = 599  # description tokens are 1..599
FINDING_BASE = 600  # diagnosis-only tokens live in 600..899
CLINICAL_BASE = 900  # clinical tokens live in 900..999


def diagnosis_rule(desc: Sequence[int]) -> TokenSeq:
    kept = [t for t in desc if t % 3 == 0][:8]
    findings = [FINDING_BASE + (37 * t) % 300 for t in desc[:5]]
    return tuple(kept + findings)


def _lengths(seqs: list[Sequence[int]]) -> dict:
    ls = [len(s) for s in seqs]
    return {"min": min(ls), "max": max(ls), "mean": round(statistics.fmean(ls), 4)}


def make_synthetic_corpus(n: int, seed: int, noise: float = 0.1,
                          per_template: int = 8) -> tuple[list[Sample], dict]:
    """``n`` samples plus a statistics header for the corpus file."""
    if n < 10:
        raise ValueError("synthetic corpus needs n >= 10")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must be in [0, 1]")
    rng = SplitMix64(seed)
    n_templates = max(2, n // per_template)
    templates = []
    for _ in range(n_templates):
        length = 10 + rng.randbelow(15)
        templates.append([1 + rng.randbelow(DESC_VOCAB) for _ in range(length)])

    order = list(range(n))
    rng.shuffle(order)
    samples = []
    for i in range(n):
        core = templates[order[i] % n_templates]
        desc = [1 + rng.randbelow(DESC_VOCAB) if rng.random() < noise else t for t in core]
        diag = [FINDING_BASE + rng.randbelow(300) if rng.random() < noise else t
                for t in diagnosis_rule(desc)]
        clinical = [CLINICAL_BASE + rng.randbelow(100) for _ in range(rng.randbelow(4))]
        samples.append(Sample(id=f"syn{i:05d}", description=tuple(desc),
                              clinical=tuple(clinical), diagnosis=tuple(diag)))

    meta = {
        "generator": "ragpipe.synth",
        "n": n,
        "seed": seed,
        "noise": noise,
        "n_templates": n_templates,
        "clinical_len": _lengths([s.clinical for s in samples]),
        "description_len": _lengths([s.description for s in samples]),
        "diagnosis_len": _lengths([s.diagnosis for s in samples]),
    }
    return samples, meta
