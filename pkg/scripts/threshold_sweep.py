"""Retrieval hit rate and copy-generator score as the threshold varies.

    python scripts/threshold_sweep.py --n 1000 --noise 0.2
"""

import argparse

from ragpipe.corpus import apply_split, split_corpus
from ragpipe.genadapter import GeneratorContract, generate
from ragpipe.kbstore import augment, build_kb, fit_builtin, render_input
from ragpipe.metrics import evaluate
from ragpipe.synth import make_synthetic_corpus


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--steps", type=int, default=9)
    args = p.parse_args()

    samples, _ = make_synthetic_corpus(args.n, args.seed, args.noise)
    train, val = apply_split(samples, split_corpus(samples, 0.9, 17))
    spec = fit_builtin(train)
    kb = build_kb(train, spec=spec)
    gold = [[str(t) for t in s.diagnosis] for s in val]
    print(f"{'k':>5} {'hits':>9} {'cider':>8} {'bleu':>7} {'score':>7}")
    for i in range(1, args.steps + 1):
        k = round(i / (args.steps + 1), 4)
        aug = augment(val, kb, k, spec=spec)
        hits = sum(1 for s in aug if s.retrieved)
        preds = generate([(s.id, render_input(s)) for s in aug], GeneratorContract())
        rep = evaluate([s.id for s in aug], preds, gold)
        print(f"{k:5.2f} {hits:4d}/{len(aug):<4d} {rep.cider:8.4f} {rep.bleu:7.4f} {rep.composite:7.4f}")


if __name__ == "__main__":
    main()
