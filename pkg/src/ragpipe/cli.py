"""``ragpipe`` command line interface."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bucketer, corruptor, embedder, kbstore, pipeline, vocab as vocab_mod
from .corpus import CorpusError, apply_split, parse_corpus, parse_tokens, render_tokens, split_corpus, write_corpus
from .ensemble import fuse_files, write_predictions
from .genadapter import GeneratorContract, generate
from .synth import make_synthetic_corpus

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 1, 2


def cmd_split(args) -> None:
    samples = parse_corpus(args.inp)
    train, val = apply_split(samples, split_corpus(samples, args.ratio, args.seed))
    write_corpus(args.out_train, train)
    write_corpus(args.out_val, val)
    print(f"train={len(train)} val={len(val)}")


def cmd_vocab(args) -> None:
    base = vocab_mod.load_base_vocab(args.base) if args.base else vocab_mod.synthetic_base(args.synthetic_base)
    new = vocab_mod.load_token_list(args.new_tokens)
    v = vocab_mod.extend_vocab(base, new, args.buckets)
    vocab_mod.save_vocab(v, args.out)
    print(f"base={v.base_size} appended={len(v) - v.base_size - len(v.specials)} size={len(v)}")


def cmd_pretrain_corpus(args) -> None:
    v = vocab_mod.load_vocab(args.vocab)
    cc = pipeline.CorruptionConfig(poisson_lambda=args.lam, max_span=args.max_span, seed=args.seed, scope=args.scope)
    pipeline.write_dae_corpus(parse_corpus(args.inp), v, args.ratio, cc, Path(args.out))


def cmd_schedule(args) -> None:
    path = Path(args.state)
    if args.action == "init":
        sched = corruptor.MaskSchedule(initial=args.initial, step=args.step, cap=args.cap)
    else:
        sched = corruptor.MaskSchedule.load(path)
        if args.action == "step":
            if args.score is None:
                raise ValueError("schedule step needs --score")
            sched = corruptor.schedule_step(sched, args.score, args.epoch)
    if args.action != "show":
        sched.save(path)
    print(sched.to_json(), end="")


def _fit_spec(path: str, dimension: int) -> embedder.EmbedderSpec:
    train = parse_corpus(path)
    return kbstore.fit_builtin(train, embedder.EmbedderSpec(dimension=dimension))


def cmd_embed(args) -> None:
    samples = parse_corpus(args.inp)
    spec = embedder.EmbedderSpec.load(args.spec) if args.spec else _fit_spec(args.fit_on or args.inp, args.dimension)
    if args.spec_out:
        spec.save(args.spec_out)
    seqs = [getattr(s, args.field) for s in samples]
    embedder.write_vectors(args.out, [s.id for s in samples], embedder.embed_many(seqs, spec))


def cmd_kb_build(args) -> None:
    train = parse_corpus(args.train)
    if args.vectors:
        kb = kbstore.build_kb(train, vectors=embedder.read_vectors(args.vectors), iteration=args.iteration)
    else:
        spec = embedder.EmbedderSpec.load(args.spec) if args.spec else _fit_spec(args.train, args.dimension)
        if args.spec_out:
            spec.save(args.spec_out)
        kb = kbstore.build_kb(train, spec=spec, iteration=args.iteration)
    kbstore.save_kb(kb, args.out)
    print(f"pairs={len(kb)} dimension={kb.dimension} iteration={kb.iteration}")


def cmd_kb_query(args) -> None:
    kb = kbstore.load_kb(args.kb)
    spec = embedder.EmbedderSpec.load(args.spec)
    res = kbstore.retrieve(embedder.embed(parse_tokens(args.text), spec), kb, args.threshold, args.exclude)
    if res.matched is None:
        print(json.dumps({"matched": None, "threshold": args.threshold}))
    else:
        sid, sim, value = res.matched
        print(json.dumps({"matched": {"source_id": sid, "similarity": sim, "value": render_tokens(value)},
                          "threshold": args.threshold}))


def cmd_augment(args) -> None:
    train = parse_corpus(args.train)
    val = parse_corpus(args.val)
    test = parse_corpus(args.test) if args.test else None
    sources = [embedder.read_vectors(p) for p in args.vectors] if args.vectors else None
    template = embedder.EmbedderSpec(dimension=args.dimension)
    outs = kbstore.iterate(train, val, args.threshold, args.iters, sources, test, template)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for it in outs:
        for name, samples in it.splits.items():
            write_corpus(out_dir / f"{name}_aug{it.iteration}.jsonl", samples)
        hits = {n: sum(1 for s in ss if len(s.retrieved) >= it.iteration) for n, ss in it.splits.items()}
        print(f"iteration {it.iteration}: " + " ".join(f"{n}={hits[n]}/{len(it.splits[n])}" for n in hits))


def cmd_bucket(args) -> None:
    samples = parse_corpus(args.inp)
    spec = embedder.EmbedderSpec.load(args.spec) if args.spec else _fit_spec(args.inp, args.dimension)
    bounds_in = [float(x) for x in args.boundaries.split(",")] if args.boundaries else []
    cfg = bucketer.BucketConfig(args.buckets, bucketer.FIXED_THRESHOLDS if bounds_in else bucketer.EQUAL_FREQUENCY,
                                bounds_in)
    assignments, bounds = bucketer.assign_buckets([(s.id, bucketer.io_similarity(s, spec)) for s in samples], cfg)
    by_id = {a.sample_id: a.bucket for a in assignments}
    write_corpus(args.out, [replace(s, bucket=by_id[s.id]) for s in samples])
    if args.boundaries_out:
        Path(args.boundaries_out).write_text(json.dumps({"mode": cfg.mode, "boundaries": bounds}, indent=2) + "\n")


def cmd_generate(args) -> None:
    gc = GeneratorContract.from_cli(args.generator, args.timeout)
    samples = parse_corpus(args.inp)
    prompt = bucketer.inference_prompt()
    inputs = []
    for s in samples:
        b = prompt if s.bucket is None or args.force_best else s.bucket
        inputs.append((s.id, bucketer.apply_prompt(s, b, max_len=args.max_len, n_buckets=args.buckets)))
    outputs = generate(inputs, gc)
    write_predictions(args.out, [(s.id, o) for s, o in zip(samples, outputs)])


def cmd_eval(args) -> None:
    report = pipeline.evaluate_files(Path(args.pred), Path(args.gold))
    doc = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"cider={report.cider:.4f} bleu={report.bleu:.4f} score={report.composite:.4f}")


def cmd_ensemble(args) -> None:
    docs = [s.diagnosis for s in parse_corpus(args.df_ref)] if args.df_ref else None
    fuse_files(args.pred, args.out, df_documents=docs)


def cmd_synth(args) -> None:
    samples, meta = make_synthetic_corpus(args.n, args.seed, args.noise)
    write_corpus(args.out, samples, meta=meta)


def cmd_run(args) -> int:
    try:
        cfg = pipeline.load_config(args.config)
        cfg.validate()
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        manifest = pipeline.run(cfg)
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for stage, status in manifest["status"].items():
        print(f"{stage:16s} {status}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ragpipe", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("split", help="seeded per-id train/val split")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--ratio", type=float, default=0.9)
    s.add_argument("--seed", type=int, default=17)
    s.add_argument("--out-train", required=True)
    s.add_argument("--out-val", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("vocab", help="extend a base vocabulary with corpus tokens")
    s.add_argument("--base", help="token-per-line base vocabulary (default: synthetic)")
    s.add_argument("--synthetic-base", type=int, default=1000)
    s.add_argument("--new-tokens", required=True)
    s.add_argument("--buckets", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_vocab)

    s = sub.add_parser("pretrain-corpus", help="span-masked denoising pairs")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--ratio", type=float, default=0.3)
    s.add_argument("--lambda", dest="lam", type=float, default=3.0)
    s.add_argument("--max-span", type=int, default=10)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--scope", choices=["all", "diagnosis"], default="all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain_corpus)

    s = sub.add_parser("schedule", help="mask-ratio schedule state")
    s.add_argument("action", choices=["init", "step", "show"])
    s.add_argument("--state", required=True)
    s.add_argument("--score", type=float)
    s.add_argument("--epoch", type=int)
    s.add_argument("--initial", type=float, default=0.3)
    s.add_argument("--step", type=float, default=0.05)
    s.add_argument("--cap", type=float, default=0.8)
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("embed", help="write an embedding exchange file")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--field", choices=["description", "diagnosis", "clinical"], default="description")
    s.add_argument("--spec", help="fitted embedder spec (default: fit on --fit-on or --in)")
    s.add_argument("--fit-on")
    s.add_argument("--spec-out")
    s.add_argument("--dimension", type=int, default=embedder.DEFAULT_DIM)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    kb = sub.add_parser("kb", help="knowledge base build/query")
    kbsub = kb.add_subparsers(dest="kb_command", required=True)
    s = kbsub.add_parser("build")
    s.add_argument("--train", required=True)
    s.add_argument("--spec")
    s.add_argument("--spec-out")
    s.add_argument("--vectors", help="external embedding exchange file")
    s.add_argument("--dimension", type=int, default=embedder.DEFAULT_DIM)
    s.add_argument("--iteration", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_kb_build)
    s = kbsub.add_parser("query")
    s.add_argument("--kb", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--text", required=True)
    s.add_argument("--threshold", type=float, default=kbstore.DEFAULT_THRESHOLD)
    s.add_argument("--exclude")
    s.set_defaults(func=cmd_kb_query)

    s = sub.add_parser("augment", help="iterative retrieval augmentation")
    s.add_argument("--train", required=True)
    s.add_argument("--val", required=True)
    s.add_argument("--test")
    s.add_argument("--threshold", type=float, default=kbstore.DEFAULT_THRESHOLD)
    s.add_argument("--iters", type=int, default=2)
    s.add_argument("--vectors", action="append", help="external vectors, one file per iteration")
    s.add_argument("--dimension", type=int, default=embedder.DEFAULT_DIM)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("bucket", help="similarity bucketing of a training corpus")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--buckets", type=int, default=4)
    s.add_argument("--boundaries", help="comma-separated descending cut points (fixed-thresholds mode)")
    s.add_argument("--spec")
    s.add_argument("--dimension", type=int, default=embedder.DEFAULT_DIM)
    s.add_argument("--out", required=True)
    s.add_argument("--boundaries-out")
    s.set_defaults(func=cmd_bucket)

    s = sub.add_parser("generate", help="run a generator over rendered inputs")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--generator", default="builtin-copy", help='"builtin-copy" or cmd:"<command>"')
    s.add_argument("--timeout", type=float, default=600.0)
    s.add_argument("--buckets", type=int, default=4)
    s.add_argument("--max-len", type=int, default=kbstore.DEFAULT_MAX_INPUT)
    s.add_argument("--force-best", action="store_true", help="prompt every input with bucket 0")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", help="BLEU / CIDEr-D / composite")
    s.add_argument("--pred", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ensemble", help="CIDEr-consensus fusion")
    s.add_argument("--pred", action="append", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--df-ref", help="corpus whose diagnoses supply document frequencies (default: the candidates)")
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("synth", help="synthetic corpus")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="full pipeline from a TOML config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except (CorpusError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return rc or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
