"""Span-mask corruption for denoising pre-training and the mask-ratio schedule."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Hashable, Sequence

from .corpus import Sample
from .hashing import SplitMix64, poisson_inverse_cdf, seeded_hash
from .vocab import MASK, SEP

RATIO_CEILING = 0.8


class CorruptionError(ValueError):
    pass


@dataclass(frozen=True)
class CorruptionSpec:
    mask_ratio: float = 0.3
    poisson_lambda: float = 3.0
    max_span: int = 10
    seed: int = 0
    max_ratio: float = RATIO_CEILING

    def __post_init__(self) -> None:
        if not 0.0 <= self.max_ratio <= RATIO_CEILING:
            raise CorruptionError(f"max_ratio must be in [0, {RATIO_CEILING}]")
        if not 0.0 <= self.mask_ratio <= self.max_ratio:
            raise CorruptionError(f"mask_ratio {self.mask_ratio} outside [0, {self.max_ratio}]")
        if self.poisson_lambda <= 0:
            raise CorruptionError("poisson_lambda must be positive")
        if self.max_span < 1:
            raise CorruptionError("max_span must be >= 1")


@dataclass
class CorruptedPair:
    source: list
    target: list
    spans: list[tuple[int, int]]


def build_pretrain_input(s: Sample) -> list[str]:
    """``C [SEP] D [SEP] O`` as surface tokens."""
    out = [str(t) for t in s.clinical]
    out.append(SEP)
    out.extend(str(t) for t in s.description)
    out.append(SEP)
    out.extend(str(t) for t in s.diagnosis)
    return out


def sample_span_length(rng: SplitMix64, lam: float, max_span: int) -> int:
    """Poisson(lam) conditioned on >= 1, clipped to ``max_span``."""
    p0 = math.exp(-lam)
    u = p0 + rng.random() * (1.0 - p0)
    return min(max(poisson_inverse_cdf(u, lam), 1), max_span)


def truncated_poisson_mean(lam: float, max_span: int) -> float:
    """E[min(X, max_span) | X >= 1] for X ~ Poisson(lam)."""
    p = math.exp(-lam)
    total = 0.0
    tail = 1.0 - p
    for k in range(1, max_span):
        p *= lam / k
        total += k * p
        tail -= p
    return (total + max_span * tail) / (1.0 - math.exp(-lam))


def _free_runs(taken: list[bool]) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, t in enumerate(taken + [True]):
        if not t and start is None:
            start = i
        elif t and start is not None:
            runs.append((start, i - start))
            start = None
    return runs


def corrupt(
    seq: Sequence[Hashable],
    spec: CorruptionSpec,
    sep: Hashable = SEP,
    mask: Hashable = MASK,
    protect_prefix: int = 0,
) -> CorruptedPair:
    """Replace Poisson-length spans of ``seq`` by single ``mask`` tokens.

    The masking budget is ``round(mask_ratio * maskable)`` tokens, where
    maskable positions are non-``sep`` positions at or after
    ``protect_prefix``. Span lengths are clipped to the remaining budget and,
    when no free run is long enough, to the longest free run, so the budget is
    always spent exactly.
    """
    target = list(seq)
    if not target:
        raise CorruptionError("cannot corrupt an empty sequence")
    taken = [tok == sep or i < protect_prefix for i, tok in enumerate(target)]
    n_maskable = taken.count(False)
    if n_maskable == 0:
        raise CorruptionError("sequence has no maskable tokens")

    rng = SplitMix64(spec.seed)
    budget = math.floor(spec.mask_ratio * n_maskable + 0.5)
    spans: list[tuple[int, int]] = []
    while budget > 0:
        length = min(sample_span_length(rng, spec.poisson_lambda, spec.max_span), budget)
        runs = _free_runs(taken)
        length = min(length, max(r[1] for r in runs))
        starts = [(a, m - length + 1) for a, m in runs if m >= length]
        pick = rng.randbelow(sum(k for _, k in starts))
        for a, k in starts:
            if pick < k:
                begin = a + pick
                break
            pick -= k
        for i in range(begin, begin + length):
            taken[i] = True
        spans.append((begin, length))
        budget -= length

    spans.sort()
    return CorruptedPair(source=apply_spans(target, spans, mask), target=target, spans=spans)


def apply_spans(target: Sequence, spans: Sequence[tuple[int, int]], mask: Hashable = MASK) -> list:
    """Collapse each ``(start, length)`` span of ``target`` into one ``mask``."""
    out = []
    pos = 0
    for start, length in sorted(spans):
        out.extend(target[pos:start])
        out.append(mask)
        pos = start + length
    out.extend(target[pos:])
    return out


def sample_seed(base_seed: int, sample_id: str) -> int:
    return seeded_hash(base_seed, sample_id)


def diagnosis_offset(seq: Sequence, sep: Hashable = SEP) -> int:
    """Index of the first diagnosis token in a ``C [SEP] D [SEP] O`` sequence."""
    seps = [i for i, t in enumerate(seq) if t == sep]
    return seps[1] + 1 if len(seps) >= 2 else len(seq)


@dataclass
class MaskSchedule:
    """Adaptive mask ratio: each probe regression bumps the ratio by ``step``."""

    initial: float = 0.3
    step: float = 0.05
    cap: float = RATIO_CEILING
    probe_interval: int = 10
    regressions: int = 0
    probe_history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def current_ratio(self) -> float:
        return min(self.initial + self.step * self.regressions, self.cap)

    def to_json(self) -> str:
        d = asdict(self)
        d["current_ratio"] = self.current_ratio
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MaskSchedule":
        d = json.loads(text)
        d.pop("current_ratio", None)
        d["probe_history"] = [tuple(p) for p in d.get("probe_history", [])]
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MaskSchedule":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def schedule_step(sched: MaskSchedule, probe_score: float, epoch: int | None = None) -> MaskSchedule:
    """Record a downstream probe; regress => ratio goes up one step (capped)."""
    if epoch is None:
        epoch = (len(sched.probe_history) + 1) * sched.probe_interval
    regressed = bool(sched.probe_history) and probe_score < sched.probe_history[-1][1]
    return replace(
        sched,
        regressions=sched.regressions + int(regressed),
        probe_history=sched.probe_history + [(epoch, float(probe_score))],
    )
