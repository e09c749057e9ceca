"""Extended vocabulary: base entries, appended desensitized tokens, specials.

Vocab file layout: one token per line (line number = index), then a trailing
manifest block introduced by ``#@specials`` with ``role<TAB>index`` lines::

    ...
    [B3]
    #@specials
    base_size	51271
    sep	51618
    mask	51619
    ...
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

SEP = "[SEP]"
MASK = "[MASK]"
PAD = "[PAD]"
MANIFEST_MARKER = "#@specials"

# Conceptual names for the first four bucket tokens.
BUCKET_LABELS = ("best match", "good match", "not good match", "noisy match")


def bucket_token(i: int) -> str:
    return f"[B{i}]"


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    entries: tuple[str, ...]
    specials: dict[str, int] = field(default_factory=dict)
    base_size: int | None = None

    def __post_init__(self) -> None:
        index = {tok: i for i, tok in enumerate(self.entries)}
        if len(index) != len(self.entries):
            raise VocabError("vocabulary entries are not unique")
        object.__setattr__(self, "_index", index)
        if self.base_size is None:
            object.__setattr__(self, "base_size", len(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def lookup(self, token: str) -> int:
        return self._index[token]

    def render(self, i: int) -> str:
        return self.entries[i]

    @property
    def sep_id(self) -> int:
        return self.specials["sep"]

    @property
    def mask_id(self) -> int:
        return self.specials["mask"]

    @property
    def pad_id(self) -> int:
        return self.specials["pad"]

    @property
    def n_buckets(self) -> int:
        return sum(1 for k in self.specials if k.startswith("b") and k[1:].isdigit())

    def bucket_id(self, i: int) -> int:
        return self.specials[f"b{i}"]


def extend_vocab(base: Vocabulary, new_tokens: Iterable[str], n_buckets: int) -> Vocabulary:
    """Append unseen ``new_tokens`` in order, then the special tokens.

    Tokens already in ``base`` (or repeated in ``new_tokens``) are dropped. A
    special whose surface form is already present keeps its existing index.
    """
    if n_buckets < 1:
        raise VocabError("n_buckets must be >= 1")
    entries = list(base.entries)
    seen = set(entries)
    for tok in new_tokens:
        if tok not in seen:
            seen.add(tok)
            entries.append(tok)
    specials: dict[str, int] = {}
    roles = [("sep", SEP), ("mask", MASK), ("pad", PAD)]
    roles += [(f"b{i}", bucket_token(i)) for i in range(n_buckets)]
    positions = {tok: i for i, tok in enumerate(entries)}
    for role, tok in roles:
        if tok not in positions:
            positions[tok] = len(entries)
            entries.append(tok)
        specials[role] = positions[tok]
    return Vocabulary(tuple(entries), specials, base_size=len(base.entries))


def encode(v: Vocabulary, seq: Sequence[str]) -> list[int]:
    out = []
    for pos, tok in enumerate(seq):
        try:
            out.append(v.lookup(tok))
        except KeyError:
            raise VocabError(f"unknown token {tok!r} at position {pos}") from None
    return out


def decode(v: Vocabulary, ids: Sequence[int]) -> list[str]:
    return [v.render(i) for i in ids]


def synthetic_base(size: int) -> Vocabulary:
    """Stand-in for a pretrained model's vocabulary.

    Contains the digits ``0``..``99`` (so appending desensitized numbers
    exercises de-duplication) padded with placeholder entries.
    """
    digits = [str(i) for i in range(min(size, 100))]
    filler = [f"<base{i}>" for i in range(size - len(digits))]
    return Vocabulary(tuple(digits + filler))


def load_token_list(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    if tokens and tokens[-1] == "":
        tokens.pop()
    if MANIFEST_MARKER in tokens:
        raise VocabError(f"{path}: plain token list contains the manifest marker")
    return tokens


def load_base_vocab(path: str | Path) -> Vocabulary:
    return Vocabulary(tuple(load_token_list(path)))


def save_vocab(v: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in v.entries:
            fh.write(tok + "\n")
        fh.write(MANIFEST_MARKER + "\n")
        fh.write(f"base_size\t{v.base_size}\n")
        for role, idx in v.specials.items():
            fh.write(f"{role}\t{idx}\n")


def load_vocab(path: str | Path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if MANIFEST_MARKER not in lines:
        return Vocabulary(tuple(lines[:-1] if lines and lines[-1] == "" else lines))
    cut = lines.index(MANIFEST_MARKER)
    specials: dict[str, int] = {}
    base_size = None
    for line in lines[cut + 1:]:
        if not line:
            continue
        role, idx = line.split("\t")
        if role == "base_size":
            base_size = int(idx)
        else:
            specials[role] = int(idx)
    return Vocabulary(tuple(lines[:cut]), specials, base_size=base_size)


def corpus_tokens(sequences: Iterable[Iterable[int]]) -> list[str]:
    """Distinct data tokens as strings, in ascending numeric order."""
    seen: set[int] = set()
    for seq in sequences:
        seen.update(seq)
    return [str(t) for t in sorted(seen)]
