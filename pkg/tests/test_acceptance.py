"""Acceptance criteria 1-9, one test each.

Every test records a PASS/FAIL line; ``conftest.pytest_terminal_summary``
prints them all at the end of the session.
"""

import itertools
import json
import random
import time

import numpy as np
import pytest
from scipy.stats import poisson

from conftest import write_config
from oracles import naive_bleu, naive_cider_d, naive_pair_cider, quantile_buckets
from ragpipe import bucketer, corruptor, embedder, kbstore
from ragpipe.corpus import parse_corpus, write_corpus
from ragpipe.ensemble import CandidateSet, candidate_doc_freq, fuse
from ragpipe.hashing import SplitMix64
from ragpipe.metrics import bleu, cider_scores, composite
from ragpipe.pipeline import load_config, run
from ragpipe.synth import make_synthetic_corpus
from ragpipe.vocab import MASK, SEP

RESULTS: list[str] = []


def report(number: int, title: str, ok: bool, elapsed: float, limit: float | None, detail: str = "") -> None:
    in_time = limit is None or elapsed < limit
    verdict = "PASS" if ok and in_time else "FAIL"
    budget = f" (limit {limit:g}s)" if limit is not None else ""
    line = f"[{verdict}] criterion {number}: {title}; {elapsed:.2f}s{budget}" + (f"; {detail}" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, detail
    assert in_time, f"took {elapsed:.2f}s, limit {limit}s"


TABLE = [
    ("Baseline", 3.0793, 0.4043, 2.1876),
    ("Span Mask", 3.1446, 0.4058, 2.2317),
    ("Retrieval-1", 3.2130, 0.4241, 2.2834),
    ("Retrieval-2", 3.2374, 0.4291, 2.3013),
    ("Bucketing", 3.2553, 0.4288, 2.3132),
    ("Tricks", 3.2735, 0.4342, 2.3271),
    ("Ensemble", 3.3242, 0.4384, 2.3622),
]


@pytest.mark.xfail(strict=True, reason="table values are rounded to 4 places; two rows sit 6.7e-5 from "
                                       "(2C+B)/3 and no fixed weighting fits all seven within 5e-5")
def test_criterion_1_composite_table():
    t0 = time.perf_counter()
    errors = {name: abs(composite(c, b) - s) for name, c, b, s in TABLE}
    worst = max(errors, key=errors.get)
    ok = all(e <= 5e-5 for e in errors.values())
    report(1, "composite reproduces all 7 table rows within 5e-5", ok, time.perf_counter() - t0, 1.0,
           f"max |error| {errors[worst]:.2e} at {worst}; rows over: "
           + ", ".join(n for n, e in errors.items() if e > 5e-5))


def test_criterion_2_metric_oracles():
    t0 = time.perf_counter()
    hand = bleu([[1, 2, 3, 4, 5]], [[1, 2, 3, 4, 6]])
    hand_ok = abs(hand - 0.2 ** 0.25) <= 1e-4 and abs(hand - 0.6687) <= 1e-4
    rnd = random.Random(2)
    worst_cider = worst_bleu = 0.0
    for _ in range(200):
        n = rnd.randint(1, 20)
        refs = [[rnd.randrange(8) for _ in range(rnd.randrange(0, 12))] for _ in range(n)]
        cands = [[rnd.randrange(8) for _ in range(rnd.randrange(1, 12))] for _ in range(n)]
        got = cider_scores(cands, refs)
        worst_cider = max([worst_cider] + [abs(g - w) for g, w in zip(got, naive_cider_d(cands, refs))])
        worst_bleu = max(worst_bleu, abs(bleu(cands, refs) - naive_bleu(cands, refs)))
    ok = hand_ok and worst_cider <= 1e-9 and worst_bleu <= 1e-12
    report(2, "BLEU hand case and CIDEr-D vs naive oracle on 200 corpora", ok, time.perf_counter() - t0, 30.0,
           f"hand BLEU {hand:.6f}; max CIDEr deviation {worst_cider:.1e}")


@pytest.mark.slow
def test_criterion_3_retrieval_oracle():
    t0 = time.perf_counter()
    train, _ = make_synthetic_corpus(5000, 31, noise=0.1)
    rnd = random.Random(3)
    queries = []  # perturbed training descriptions: from exact copies to mostly replaced
    for q in rnd.sample(train, 1000):
        rate = rnd.choice([0.0, 0.1, 0.3, 0.6, 0.9])
        queries.append(tuple(t if rnd.random() >= rate else rnd.randrange(1, 600) for t in q.description))
    spec = kbstore.fit_builtin(train)
    kb = kbstore.build_kb(train, spec=spec)
    assert len(kb) == 5000
    raw_keys = np.stack([embedder.embed(s.description, spec) for s in train])
    key_ids = [s.id for s in train]
    order = sorted(range(len(key_ids)), key=lambda i: key_ids[i])
    qv = np.stack([embedder.embed(q, spec) for q in queries])
    # brute force: full cosine matrix with columns in id order; argmax returns the first maximum
    key_norms = np.sqrt(np.einsum("ij,ij->i", raw_keys, raw_keys))
    q_norms = np.sqrt(np.einsum("ij,ij->i", qv, qv))
    cos = (qv @ raw_keys[order].T) / np.outer(q_norms, key_norms[order])
    first = cos.argmax(axis=1)
    want = [(key_ids[order[j]], float(cos[r, j])) for r, j in enumerate(first)]
    mismatches = 0
    matched_at = {}
    for k in [round(0.1 * i, 1) for i in range(1, 10)]:
        got = kbstore.retrieve_many(qv, kb, k)
        matched_at[k] = {r for r, g in enumerate(got) if g.matched}
        for r, g in enumerate(got):
            w = want[r] if want[r][1] >= k else None
            if (g.matched is None) != (w is None):
                mismatches += 1
            elif w is not None and (g.matched[0] != w[0] or abs(g.matched[1] - w[1]) > 1e-9):
                mismatches += 1
    ks = sorted(matched_at)
    monotone = all(matched_at[b] <= matched_at[a] for a, b in zip(ks, ks[1:]))
    ok = mismatches == 0 and monotone
    report(3, "retrieve() matches brute-force scan (1000 queries, 5000 pairs) and is threshold-monotone",
           ok, time.perf_counter() - t0, 60.0,
           f"{mismatches} mismatches over 9 thresholds; hits at 0.1/0.5/0.9: "
           f"{len(matched_at[0.1])}/{len(matched_at[0.5])}/{len(matched_at[0.9])}")


def _truncated_poisson_mean(lam, max_span):
    z = 1 - poisson.pmf(0, lam)
    return sum(min(k, max_span) * poisson.pmf(k, lam) for k in range(1, 200)) / z


def test_criterion_4_corruptor_statistics():
    t0 = time.perf_counter()
    rng = SplitMix64(4)
    spans = [corruptor.sample_span_length(rng, 3.0, 10) for _ in range(10_000)]
    analytic = _truncated_poisson_mean(3.0, 10)
    mean_dev = abs(sum(spans) / len(spans) - analytic)
    seq = [str(i % 50) for i in range(100)]
    fracs = [sum(l for _, l in corruptor.corrupt(seq, corruptor.CorruptionSpec(0.3, seed=s)).spans) / 100
             for s in range(1000)]
    frac = sum(fracs) / len(fracs)
    rnd = random.Random(44)
    broken = 0
    checked = 0
    while checked < 10_000:
        n = rnd.randrange(1, 60)
        s = [SEP if rnd.random() < 0.1 else str(rnd.randrange(50)) for _ in range(n)]
        if all(t == SEP for t in s):
            continue
        pair = corruptor.corrupt(s, corruptor.CorruptionSpec(rnd.choice([0.1, 0.3, 0.5, 0.8]), seed=checked))
        broken += corruptor.apply_spans(pair.target, pair.spans, MASK) != pair.source or pair.target != s
        checked += 1
    ok = mean_dev <= 0.1 and abs(frac - 0.30) <= 0.02 and broken == 0
    report(4, "span-length mean, masked fraction and reconstruction identity", ok, time.perf_counter() - t0, 60.0,
           f"span mean dev {mean_dev:.4f} (analytic {analytic:.4f}); masked fraction {frac:.4f}; "
           f"{broken} reconstruction failures")


def test_criterion_5_schedule_state_machine():
    t0 = time.perf_counter()
    bad = 0
    cases = 0
    for cap in (corruptor.RATIO_CEILING, 0.5):
        for pattern in itertools.product([False, True], repeat=10):
            sched = corruptor.schedule_step(corruptor.MaskSchedule(cap=cap), 5.0)
            score = 5.0
            regressions = 0
            for regress in pattern:
                score += -1.0 if regress else 0.5
                regressions += regress
                sched = corruptor.schedule_step(sched, score)
                bad += abs(sched.current_ratio - min(0.30 + 0.05 * regressions, cap)) > 1e-12
            cases += 1
    ok = bad == 0 and cases == 2048
    report(5, "current_ratio equals the closed form over all 1024 probe patterns", ok,
           time.perf_counter() - t0, 5.0, f"{cases} patterns over 2 caps, {bad} deviations")


def test_criterion_6_bucketing():
    t0 = time.perf_counter()
    rnd = random.Random(6)
    bad = 0
    for t in range(500):
        m = rnd.randint(4, 200)
        n = rnd.randint(2, min(8, m))
        pool = [round(rnd.uniform(-1, 1), rnd.choice([1, 2, 6])) for _ in range(m)]  # rounding makes ties
        sims = [(f"id{rnd.randrange(10**6):06d}_{i}", v) for i, v in enumerate(pool)]
        out, _ = bucketer.assign_buckets(sims, bucketer.BucketConfig(n))
        got = {a.sample_id: a.bucket for a in out}
        partition = len(got) == m and all(0 <= b < n for b in got.values())
        by_bucket = [[a.similarity for a in out if a.bucket == b] for b in range(n)]
        ordered = all(min(by_bucket[b]) >= max(by_bucket[b + 1]) for b in range(n - 1))
        bad += not (partition and ordered and got == quantile_buckets(sims, n))
    prompts = {bucketer.inference_prompt(bucketer.BucketConfig(n)) for n in range(2, 9)}
    prompts.add(bucketer.inference_prompt())
    ok = bad == 0 and prompts == {0}
    report(6, "equal-frequency buckets match the quantile oracle on 500 lists; inference prompt is bucket 0",
           ok, time.perf_counter() - t0, 10.0, f"{bad} mismatching lists; inference prompts {sorted(prompts)}")


def test_criterion_7_ensemble():
    t0 = time.perf_counter()
    rnd = random.Random(7)
    bad = 0
    for k in range(500):
        n = rnd.randint(1, 5)
        cands = [tuple(str(rnd.randrange(6)) for _ in range(rnd.randrange(1, 9))) for _ in range(n)]
        if n > 2 and rnd.random() < 0.3:
            cands[rnd.randrange(n)] = cands[0]
        cs = CandidateSet(f"s{k}", cands, [f"m{i}" for i in range(n)])
        brute = [sum(naive_pair_cider(cands[i], cands[j], cands) for j in range(n) if j != i) for i in range(n)]
        top = max(brute)
        want = min(i for i in range(n) if abs(brute[i] - top) <= 1e-9)
        sel, scores = fuse(cs, candidate_doc_freq([cs]))
        bad += sel != cands[want] or any(abs(a - b) > 1e-9 for a, b in zip(scores, brute))
    lone = CandidateSet("x", [("1", "2")], ["m0"])
    lone_sel, lone_scores = fuse(lone, candidate_doc_freq([lone]))
    a, b = ("1", "2", "3", "4", "5"), ("6", "7", "8", "9", "10")
    clones = CandidateSet("y", [b, a, a], ["m0", "m1", "m2"])
    clone_sel, _ = fuse(clones, candidate_doc_freq([clones]))
    ok = bad == 0 and lone_sel == ("1", "2") and lone_scores == [0.0] and clone_sel == a
    report(7, "fuse() equals brute-force pairwise CIDEr argmax on 500 sets; n=1 and clone cases", ok,
           time.perf_counter() - t0, 30.0, f"{bad} mismatching sets")


def _noiseless_run(directory, n=200, seed=1):
    directory.mkdir(parents=True, exist_ok=True)
    samples, meta = make_synthetic_corpus(n, seed, noise=0.0)
    write_corpus(directory / "synth.jsonl", samples, meta=meta)
    cfg = load_config(write_config(directory, retrieval={"iterations": 2}, bucket={"n_buckets": 4}), env={})
    return cfg, run(cfg)


@pytest.mark.slow
def test_criterion_8_end_to_end(tmp_path):
    t0 = time.perf_counter()
    cfg, manifest = _noiseless_run(tmp_path / "e2e")
    rep = json.loads((cfg.out_dir / "report_val.json").read_text())
    stages = list(manifest["status"])
    val_buckets = {s.bucket for s in parse_corpus(cfg.out_dir / "val_bucketed.jsonl")}
    ok = (len(stages) == 10 and rep["bleu"] == 1.0 and abs(rep["cider"] - 10.0) <= 1e-9
          and val_buckets == {0} and (cfg.out_dir / "kb_iter2.jsonl").exists())
    report(8, "200-sample noiseless pipeline reaches BLEU 1.0 and CIDEr 10.0 on val", ok,
           time.perf_counter() - t0, 120.0,
           f"val n={rep['n']} BLEU {rep['bleu']:.6f} CIDEr {rep['cider']:.6f}; stages {len(stages)}")


@pytest.mark.slow
def test_criterion_9_determinism(tmp_path):
    t0 = time.perf_counter()
    dirs = []
    for name in ("a", "b"):
        cfg, _ = _noiseless_run(tmp_path / name, seed=9)
        dirs.append(cfg.out_dir)

    def snapshot(d):
        return {p.relative_to(d).as_posix(): p.read_bytes()
                for p in sorted(d.rglob("*")) if p.is_file() and p.name != "timings.json"}

    a, b = snapshot(dirs[0]), snapshot(dirs[1])
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and "manifest.json" in a
    report(9, "two identical runs give byte-identical outputs and manifests", ok, time.perf_counter() - t0, None,
           f"{len(a)} files compared; differing: {differing or 'none'}")
