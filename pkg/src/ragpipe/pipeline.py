"""End-to-end orchestration with content-hash stage skipping.

A run is described by one TOML file. Every stage declares its input files,
its parameters and its output files; a stage is skipped when the manifest
already holds an entry with the same (parameters, input hashes) key and all
recorded outputs still hash to what the manifest says.

Any ``RAGPIPE_<SECTION>_<KEY>`` environment variable overrides the matching
config value.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import bucketer, corruptor, embedder, kbstore, metrics, vocab as vocab_mod
from .corpus import Sample, apply_split, parse_corpus, render_tokens, split_corpus, write_corpus
from .ensemble import fuse_corpus, read_predictions, write_predictions
from .genadapter import GeneratorContract, GeneratorError, generate, probe_score
from .hashing import sha256_bytes, sha256_file

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PathsConfig:
    corpus: str = ""
    out_dir: str = "run"
    test: str = ""
    base_vocab: str = ""
    schedule_state: str = ""


@dataclass
class SplitConfig:
    ratio: float = 0.9
    seed: int = 17


@dataclass
class VocabConfig:
    synthetic_base_size: int = 1000


@dataclass
class CorruptionConfig:
    poisson_lambda: float = 3.0
    max_span: int = 10
    seed: int = 7
    scope: str = "all"  # or "diagnosis"


@dataclass
class ScheduleConfig:
    initial: float = 0.3
    step: float = 0.05
    cap: float = 0.8
    probe_interval: int = 10


@dataclass
class EmbedderConfig:
    kind: str = embedder.BUILTIN
    dimension: int = embedder.DEFAULT_DIM
    external_vectors: list[str] = field(default_factory=list)


@dataclass
class RetrievalConfig:
    threshold: float = kbstore.DEFAULT_THRESHOLD
    iterations: int = 2
    max_input_len: int = kbstore.DEFAULT_MAX_INPUT


@dataclass
class BucketSection:
    n_buckets: int = 4
    mode: str = bucketer.EQUAL_FREQUENCY
    boundaries: list[float] = field(default_factory=list)


@dataclass
class GeneratorSection:
    kind: str = "builtin-copy"
    command: str = ""
    timeout: float = 600.0


@dataclass
class EnsembleSection:
    predictions: list[str] = field(default_factory=list)
    df_reference: str = ""  # corpus whose diagnoses supply df; empty means the candidates


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    vocab: VocabConfig = field(default_factory=VocabConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    bucket: BucketSection = field(default_factory=BucketSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    base_dir: Path = field(default_factory=Path.cwd)

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.paths.out_dir)

    def sections(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "base_dir"}

    def validate(self) -> None:
        c = self
        checks = [
            (bool(c.paths.corpus), "paths.corpus is required"),
            (0 < c.split.ratio < 1, f"split.ratio {c.split.ratio} must be in (0, 1)"),
            (c.vocab.synthetic_base_size >= 0, "vocab.synthetic_base_size must be >= 0"),
            (c.corruption.poisson_lambda > 0, "corruption.poisson_lambda must be positive"),
            (c.corruption.max_span >= 1, "corruption.max_span must be >= 1"),
            (c.corruption.scope in ("all", "diagnosis"), f"corruption.scope {c.corruption.scope!r} unknown"),
            (0 <= c.schedule.initial <= c.schedule.cap <= corruptor.RATIO_CEILING,
             f"need 0 <= schedule.initial <= schedule.cap <= {corruptor.RATIO_CEILING}"),
            (c.schedule.step >= 0, "schedule.step must be >= 0"),
            (c.schedule.probe_interval >= 1, "schedule.probe_interval must be >= 1"),
            (c.embedder.kind in (embedder.BUILTIN, embedder.EXTERNAL), f"embedder.kind {c.embedder.kind!r} unknown"),
            (c.embedder.dimension >= 1, "embedder.dimension must be >= 1"),
            (-1 <= c.retrieval.threshold <= 1, f"retrieval.threshold {c.retrieval.threshold} must be in [-1, 1]"),
            (c.retrieval.iterations >= 1, "retrieval.iterations must be >= 1"),
            (c.retrieval.max_input_len >= 1, "retrieval.max_input_len must be >= 1"),
            (c.generator.timeout > 0, "generator.timeout must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if c.embedder.kind == embedder.EXTERNAL and len(c.embedder.external_vectors) < c.retrieval.iterations:
            raise ConfigError("external embedder needs one vector file per retrieval iteration")
        try:
            bucketer.BucketConfig(c.bucket.n_buckets, c.bucket.mode, list(c.bucket.boundaries))
            GeneratorContract(c.generator.kind, c.generator.command or None, c.generator.timeout)
        except (ValueError, GeneratorError) as exc:
            raise ConfigError(str(exc)) from None
        required = [c.paths.corpus, c.paths.test, c.paths.base_vocab, c.paths.schedule_state]
        required += c.embedder.external_vectors + c.ensemble.predictions + [c.ensemble.df_reference]
        for p in required:
            if p and not self.path(p).exists():
                raise ConfigError(f"path does not exist: {self.path(p)}")


def _coerce(value, default):
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes") if isinstance(value, str) else bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, list):
        if isinstance(value, str):
            value = json.loads(value) if value.strip().startswith("[") else [v for v in value.split(",") if v]
        return list(value)
    return str(value)


def config_from_dict(data: Mapping, base_dir: Path | None = None,
                     env: Mapping[str, str] | None = None) -> PipelineConfig:
    cfg = PipelineConfig(base_dir=base_dir or Path.cwd())
    env = os.environ if env is None else env
    for name, section in cfg.sections().items():
        given = dict(data.get(name, {}))
        known = {f.name for f in dataclasses.fields(section)}
        unknown = set(given) - known
        if unknown:
            raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
        for key in known:
            default = getattr(section, key)
            env_key = f"RAGPIPE_{name.upper()}_{key.upper()}"
            raw = env.get(env_key, given.get(key, default))
            try:
                setattr(section, key, _coerce(raw, default))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}] {key}: {exc}") from None
    unknown_sections = set(data) - set(cfg.sections())
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown_sections))}")
    return cfg


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data, base_dir=path.parent.resolve(), env=env)


class Runner:
    """Executes stages in order and maintains ``manifest.json`` under out_dir.

    The manifest holds only content hashes and relative paths so identical
    runs produce identical bytes; wall times go to ``timings.json``.
    """

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = out_dir
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = out_dir / "manifest.json"
        self.previous: dict[str, dict] = {}
        if self.manifest_path.exists():
            try:
                old = json.loads(self.manifest_path.read_text(encoding="utf-8"))
                self.previous = {e["stage"]: e for e in old.get("stages", [])}
            except (json.JSONDecodeError, KeyError):
                self.previous = {}
        self.entries: list[dict] = []
        self.status: dict[str, str] = {}
        self.timings: dict[str, float] = {}

    def rel(self, p: Path) -> str:
        return os.path.relpath(p, self.out_dir)

    def stage(self, name: str, inputs: list[Path], params: dict, outputs: list[Path],
              fn: Callable[[], None]) -> None:
        t0 = time.perf_counter()
        try:
            in_hashes = {self.rel(p): sha256_file(p) for p in inputs}
        except OSError as exc:
            raise StageError(name, exc) from exc
        key = sha256_bytes(json.dumps({"stage": name, "params": params, "inputs": in_hashes},
                                      sort_keys=True).encode())
        prev = self.previous.get(name)
        if prev and prev["key"] == key and self._outputs_intact(prev, outputs):
            entry = prev
            self.status[name] = "skipped"
        else:
            log.info("running stage %s", name)
            try:
                fn()
            except Exception as exc:
                self._write()
                raise StageError(name, exc) from exc
            entry = {
                "stage": name,
                "key": key,
                "params": params,
                "inputs": in_hashes,
                "outputs": {self.rel(p): sha256_file(p) for p in outputs},
            }
            self.status[name] = "ran"
        self.entries.append(entry)
        self.timings[name] = round(time.perf_counter() - t0, 6)
        self._write()

    def _outputs_intact(self, prev: dict, outputs: list[Path]) -> bool:
        recorded = prev.get("outputs", {})
        for p in outputs:
            r = self.rel(p)
            if r not in recorded or not p.exists() or sha256_file(p) != recorded[r]:
                return False
        return True

    def _write(self) -> None:
        done = {e["stage"] for e in self.entries}
        # keep entries of stages not reached yet in this run so a later rerun can still skip them
        pending = [e for s, e in self.previous.items() if s not in done]
        doc = {"stages": self.entries + pending}
        self.manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (self.out_dir / "timings.json").write_text(json.dumps(self.timings, indent=2) + "\n", encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run(cfg: PipelineConfig) -> dict:
    """Execute every stage; returns the manifest plus per-stage run/skip status."""
    cfg.validate()
    out = cfg.out_dir
    runner = Runner(out)
    P = lambda name: out / name  # noqa: E731
    corpus_path = cfg.path(cfg.paths.corpus)
    test_path = cfg.path(cfg.paths.test) if cfg.paths.test else None
    n_iters = cfg.retrieval.iterations
    max_len = cfg.retrieval.max_input_len
    gen = GeneratorContract(cfg.generator.kind, cfg.generator.command or None, cfg.generator.timeout)
    splits = ["train", "val"] + (["test"] if test_path else [])

    # split
    def do_split() -> None:
        samples = parse_corpus(corpus_path)
        assignment = split_corpus(samples, cfg.split.ratio, cfg.split.seed)
        train, val = apply_split(samples, assignment)
        write_corpus(P("train.jsonl"), train)
        write_corpus(P("val.jsonl"), val)

    runner.stage("split", [corpus_path], dataclasses.asdict(cfg.split),
                 [P("train.jsonl"), P("val.jsonl")], do_split)

    # vocab
    base_path = cfg.path(cfg.paths.base_vocab) if cfg.paths.base_vocab else None
    vocab_inputs = [corpus_path] + ([test_path] if test_path else []) + ([base_path] if base_path else [])

    def do_vocab() -> None:
        samples = parse_corpus(corpus_path) + (parse_corpus(test_path) if test_path else [])
        base = vocab_mod.load_base_vocab(base_path) if base_path else vocab_mod.synthetic_base(cfg.vocab.synthetic_base_size)
        seqs = [seq for s in samples for seq in (s.clinical, s.description, s.diagnosis)]
        v = vocab_mod.extend_vocab(base, vocab_mod.corpus_tokens(seqs), cfg.bucket.n_buckets)
        vocab_mod.save_vocab(v, P("vocab.txt"))

    runner.stage("vocab", vocab_inputs,
                 {"n_buckets": cfg.bucket.n_buckets,
                  "synthetic_base_size": None if base_path else cfg.vocab.synthetic_base_size},
                 [P("vocab.txt")], do_vocab)

    # pretrain corpus + schedule probe
    state_path = cfg.path(cfg.paths.schedule_state) if cfg.paths.schedule_state else None

    def do_pretrain() -> None:
        v = vocab_mod.load_vocab(P("vocab.txt"))
        if state_path:
            sched = corruptor.MaskSchedule.load(state_path)
        else:
            sched = corruptor.MaskSchedule(**dataclasses.asdict(cfg.schedule))
        write_dae_corpus(parse_corpus(P("train.jsonl")), v, sched.current_ratio, cfg.corruption, P("dae.jsonl"))
        score = probe_score(parse_corpus(P("val.jsonl")), gen, max_len, cfg.bucket.n_buckets)
        corruptor.schedule_step(sched, score).save(P("schedule.json"))

    runner.stage("pretrain-corpus",
                 [P("train.jsonl"), P("val.jsonl"), P("vocab.txt")] + ([state_path] if state_path else []),
                 {"corruption": dataclasses.asdict(cfg.corruption), "schedule": dataclasses.asdict(cfg.schedule),
                  "generator": dataclasses.asdict(cfg.generator), "max_input_len": max_len},
                 [P("dae.jsonl"), P("schedule.json")], do_pretrain)

    # embedder (builtin fit is always produced: bucketing similarities use it)
    def do_embed() -> None:
        template = embedder.EmbedderSpec(dimension=cfg.embedder.dimension)
        kbstore.fit_builtin(parse_corpus(P("train.jsonl")), template).save(P("embedder.json"))

    runner.stage("embed", [P("train.jsonl")], {"dimension": cfg.embedder.dimension},
                 [P("embedder.json")], do_embed)

    external = cfg.embedder.kind == embedder.EXTERNAL
    vector_paths = [cfg.path(p) for p in cfg.embedder.external_vectors[:n_iters]] if external else []

    def vectors_for(k: int):
        return embedder.read_vectors(vector_paths[k - 1]) if external else None

    # knowledge bases, one per retrieval iteration
    kb_paths = [P(f"kb_iter{k}.jsonl") for k in range(1, n_iters + 1)]

    def do_kb() -> None:
        spec = embedder.EmbedderSpec.load(P("embedder.json"))
        train = parse_corpus(P("train.jsonl"))
        for k, path in enumerate(kb_paths, start=1):
            kb = kbstore.build_kb(train, spec=None if external else spec, vectors=vectors_for(k),
                                  iteration=k, fingerprint=sha256_file(vector_paths[k - 1])[:16] if external else None)
            kbstore.save_kb(kb, path)

    runner.stage("kb", [P("train.jsonl"), P("embedder.json")] + vector_paths,
                 {"kind": cfg.embedder.kind, "iterations": n_iters}, kb_paths, do_kb)

    # augmentation
    aug_paths = {k: {sp: P(f"{sp}_aug{k}.jsonl") for sp in splits} for k in range(1, n_iters + 1)}

    def do_augment() -> None:
        spec = embedder.EmbedderSpec.load(P("embedder.json"))
        current = {"train": parse_corpus(P("train.jsonl")), "val": parse_corpus(P("val.jsonl"))}
        if test_path:
            current["test"] = parse_corpus(test_path)
        for k in range(1, n_iters + 1):
            kb = kbstore.load_kb(kb_paths[k - 1])
            vecs = vectors_for(k)
            for sp in splits:
                current[sp] = kbstore.augment(current[sp], kb, cfg.retrieval.threshold,
                                              spec=None if external else spec, vectors=vecs,
                                              exclude_self=(sp == "train"), max_retrieved=n_iters)
                write_corpus(aug_paths[k][sp], current[sp])

    runner.stage("augment",
                 [P("train.jsonl"), P("val.jsonl"), P("embedder.json")] + kb_paths + vector_paths
                 + ([test_path] if test_path else []),
                 {"threshold": cfg.retrieval.threshold, "iterations": n_iters},
                 [p for k in aug_paths for p in aug_paths[k].values()], do_augment)

    # bucketing
    final = aug_paths[n_iters]
    bucketed = {sp: P(f"{sp}_bucketed.jsonl") for sp in splits}

    def do_bucket() -> None:
        spec = embedder.EmbedderSpec.load(P("embedder.json"))
        bcfg = bucketer.BucketConfig(cfg.bucket.n_buckets, cfg.bucket.mode, list(cfg.bucket.boundaries))
        train = parse_corpus(final["train"])
        sims = [(s.id, bucketer.io_similarity(s, spec)) for s in train]
        assignments, bounds = bucketer.assign_buckets(sims, bcfg)
        by_id = {a.sample_id: a.bucket for a in assignments}
        write_corpus(bucketed["train"], [dataclasses.replace(s, bucket=by_id[s.id]) for s in train])
        best = bucketer.inference_prompt(bcfg)
        for sp in splits[1:]:
            write_corpus(bucketed[sp], [dataclasses.replace(s, bucket=best) for s in parse_corpus(final[sp])])
        sizes = [sum(1 for a in assignments if a.bucket == b) for b in range(bcfg.n_buckets)]
        _write_json(P("bounds.json"), {
            "mode": bcfg.mode, "n_buckets": bcfg.n_buckets, "boundaries": bounds, "sizes": sizes,
            "labels": [bucketer.bucket_label(b) for b in range(bcfg.n_buckets)],
        })

    runner.stage("bucket", list(final.values()) + [P("embedder.json")], dataclasses.asdict(cfg.bucket),
                 list(bucketed.values()) + [P("bounds.json")], do_bucket)

    # generation
    preds = {sp: P(f"preds_{sp}.jsonl") for sp in splits[1:]}

    def do_generate() -> None:
        v = vocab_mod.load_vocab(P("vocab.txt"))
        for sp, path in preds.items():
            samples = parse_corpus(bucketed[sp])
            inputs = [(s.id, bucketer.apply_prompt(s, s.bucket, v, max_len)) for s in samples]
            outputs = generate(inputs, gen)
            write_predictions(path, [(s.id, o) for s, o in zip(samples, outputs)])

    runner.stage("generate", [bucketed[sp] for sp in preds] + [P("vocab.txt")],
                 {"generator": dataclasses.asdict(cfg.generator), "max_input_len": max_len},
                 list(preds.values()), do_generate)

    # evaluation on the validation split
    def do_eval() -> None:
        report = evaluate_files(preds["val"], P("val.jsonl"))
        _write_json(P("report_val.json"), report.to_dict())

    runner.stage("eval", [preds["val"], P("val.jsonl")], {}, [P("report_val.json")], do_eval)

    # ensemble: this run's predictions first, then any configured extra models
    extra = [cfg.path(p) for p in cfg.ensemble.predictions]
    df_ref = cfg.path(cfg.ensemble.df_reference) if cfg.ensemble.df_reference else None

    def do_ensemble() -> None:
        per_model = [read_predictions(preds["val"])] + [read_predictions(p) for p in extra]
        docs = [s.diagnosis for s in parse_corpus(df_ref)] if df_ref else None
        fused = fuse_corpus(per_model, ["pipeline"] + [str(p) for p in cfg.ensemble.predictions],
                            df_documents=docs)
        write_predictions(P("fused_val.jsonl"), fused)
        _write_json(P("report_fused.json"), evaluate_files(P("fused_val.jsonl"), P("val.jsonl")).to_dict())

    runner.stage("ensemble", [preds["val"], P("val.jsonl")] + extra + ([df_ref] if df_ref else []), {},
                 [P("fused_val.jsonl"), P("report_fused.json")], do_ensemble)

    manifest = json.loads(runner.manifest_path.read_text(encoding="utf-8"))
    manifest["status"] = dict(runner.status)
    return manifest


def write_dae_corpus(train: list[Sample], v: vocab_mod.Vocabulary, ratio: float,
                     cc: CorruptionConfig, out: Path) -> None:
    """One ``{id, source, target, spans}`` record per sample, as vocab indices."""
    with open(out, "w", encoding="utf-8") as fh:
        for s in train:
            target = vocab_mod.encode(v, corruptor.build_pretrain_input(s))
            prefix = corruptor.diagnosis_offset(target, v.sep_id) if cc.scope == "diagnosis" else 0
            spec = corruptor.CorruptionSpec(ratio, cc.poisson_lambda, cc.max_span,
                                            corruptor.sample_seed(cc.seed, s.id))
            try:
                pair = corruptor.corrupt(target, spec, v.sep_id, v.mask_id, protect_prefix=prefix)
            except corruptor.CorruptionError:
                # nothing maskable (e.g. empty diagnosis under diagnosis scope)
                pair = corruptor.CorruptedPair(list(target), list(target), [])
            fh.write(json.dumps({"id": s.id, "source": pair.source, "target": pair.target,
                                 "spans": [list(sp) for sp in pair.spans]}) + "\n")


def evaluate_files(pred_path: Path, gold_path: Path) -> metrics.EvalReport:
    preds = read_predictions(pred_path)
    gold = parse_corpus(gold_path)
    missing = [s.id for s in gold if s.id not in preds]
    if missing:
        raise ValueError(f"predictions missing {len(missing)} gold ids, e.g. {missing[:5]}")
    ids = [s.id for s in gold]
    return metrics.evaluate(ids, [list(preds[i]) for i in ids],
                            [render_tokens(s.diagnosis).split() for s in gold])
