"""Corpus BLEU-4, CIDEr-D and the leaderboard composite score."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

MAX_ORDER = 4
SIGMA = 6.0
CIDER_D = "cider-d"
CIDER_PLAIN = "cider"


class MetricError(ValueError):
    pass


def ngram_counts(seq: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def _check(candidates: Sequence, references: Sequence) -> None:
    if len(candidates) != len(references):
        raise MetricError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise MetricError("empty corpus")


@dataclass
class NGramStats:
    matches: list[int] = field(default_factory=lambda: [0] * MAX_ORDER)
    totals: list[int] = field(default_factory=lambda: [0] * MAX_ORDER)
    cand_len: int = 0
    ref_len: int = 0

    def __iadd__(self, other: "NGramStats") -> "NGramStats":
        for i in range(MAX_ORDER):
            self.matches[i] += other.matches[i]
            self.totals[i] += other.totals[i]
        self.cand_len += other.cand_len
        self.ref_len += other.ref_len
        return self


def bleu_stats(candidate: Sequence, reference: Sequence) -> NGramStats:
    st = NGramStats(cand_len=len(candidate), ref_len=len(reference))
    for n in range(1, MAX_ORDER + 1):
        c = ngram_counts(candidate, n)
        r = ngram_counts(reference, n)
        st.matches[n - 1] = sum(min(k, r[g]) for g, k in c.items())
        st.totals[n - 1] = max(len(candidate) - n + 1, 0)
    return st


def bleu_from_stats(st: NGramStats) -> float:
    if any(m == 0 for m in st.matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(st.matches, st.totals)) / MAX_ORDER
    bp = min(0.0, 1.0 - st.ref_len / st.cand_len)
    return math.exp(log_p + bp)


def bleu(candidates: Sequence[Sequence], references: Sequence[Sequence]) -> float:
    """Corpus BLEU-4, single reference, uniform weights, no smoothing."""
    _check(candidates, references)
    total = NGramStats()
    for c, r in zip(candidates, references):
        total += bleu_stats(c, r)
    return bleu_from_stats(total)


class DocFreq:
    """Document frequencies of 1..4-grams over a set of reference documents."""

    def __init__(self, documents: Iterable[Sequence]) -> None:
        self.df: Counter = Counter()
        self.n_docs = 0
        for doc in documents:
            self.n_docs += 1
            grams = set()
            for n in range(1, MAX_ORDER + 1):
                grams.update(ngram_counts(doc, n))
            self.df.update(grams)
        if self.n_docs == 0:
            raise MetricError("document-frequency corpus is empty")
        self.log_n = math.log(self.n_docs)

    def idf(self, gram: tuple) -> float:
        # unseen n-grams get the maximal weight ln(N)
        return self.log_n - math.log(max(1, self.df.get(gram, 0)))


def _tfidf(seq: Sequence, df: DocFreq) -> tuple[list[dict], list[float]]:
    vecs = []
    norms = []
    for n in range(1, MAX_ORDER + 1):
        v = {g: k * df.idf(g) for g, k in ngram_counts(seq, n).items()}
        vecs.append(v)
        norms.append(math.sqrt(sum(x * x for x in v.values())))
    return vecs, norms


def cider_pair(candidate: Sequence, reference: Sequence, df: DocFreq,
               variant: str = CIDER_D, sigma: float = SIGMA) -> float:
    """CIDEr(-D) of one candidate against one reference, in [0, 10]."""
    cv, cn = _tfidf(candidate, df)
    rv, rn = _tfidf(reference, df)
    clip = variant == CIDER_D
    if variant not in (CIDER_D, CIDER_PLAIN):
        raise MetricError(f"unknown CIDEr variant {variant!r}")
    penalty = math.exp(-((len(candidate) - len(reference)) ** 2) / (2 * sigma**2)) if clip else 1.0
    total = 0.0
    for n in range(MAX_ORDER):
        if cn[n] == 0.0 or rn[n] == 0.0:
            continue
        dot = 0.0
        for g, x in cv[n].items():
            y = rv[n].get(g)
            if y is not None:
                dot += (min(x, y) if clip else x) * y
        total += dot / (cn[n] * rn[n])
    return 10.0 * penalty * total / MAX_ORDER


def cider_scores(candidates: Sequence[Sequence], references: Sequence[Sequence],
                 variant: str = CIDER_D, sigma: float = SIGMA,
                 df: DocFreq | None = None) -> list[float]:
    """Per-pair CIDEr; document frequencies come from ``references`` unless given."""
    _check(candidates, references)
    df = df or DocFreq(references)
    return [cider_pair(c, r, df, variant, sigma) for c, r in zip(candidates, references)]


def cider(candidates: Sequence[Sequence], references: Sequence[Sequence],
          variant: str = CIDER_D, sigma: float = SIGMA) -> float:
    scores = cider_scores(candidates, references, variant, sigma)
    return sum(scores) / len(scores)


def composite(cider_score: float, bleu_score: float) -> float:
    """Leaderboard score: two parts CIDEr to one part BLEU."""
    return (2.0 * cider_score + bleu_score) / 3.0


@dataclass
class EvalReport:
    cider: float
    bleu: float
    composite: float
    per_sample: list[dict]

    def to_dict(self) -> dict:
        return {
            "cider": self.cider,
            "bleu": self.bleu,
            "composite": self.composite,
            "n": len(self.per_sample),
            "per_sample": self.per_sample,
        }


def evaluate(ids: Sequence[str], candidates: Sequence[Sequence], references: Sequence[Sequence],
             variant: str = CIDER_D) -> EvalReport:
    _check(candidates, references)
    c_scores = cider_scores(candidates, references, variant)
    per = []
    total = NGramStats()
    for sid, c, r, cs in zip(ids, candidates, references, c_scores):
        st = bleu_stats(c, r)
        total += st
        per.append({
            "id": sid,
            "cider": cs,
            "matches": st.matches,
            "totals": st.totals,
            "cand_len": st.cand_len,
            "ref_len": st.ref_len,
        })
    c_mean = sum(c_scores) / len(c_scores)
    b = bleu_from_stats(total)
    return EvalReport(cider=c_mean, bleu=b, composite=composite(c_mean, b), per_sample=per)
