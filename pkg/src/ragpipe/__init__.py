"""Retrieval-augmented report generation pipeline for desensitized corpora."""

from .corpus import Sample, TokenSeq, parse_corpus, split_corpus, write_corpus
from .metrics import bleu, cider, composite

__all__ = ["Sample", "TokenSeq", "parse_corpus", "split_corpus", "write_corpus", "bleu", "cider", "composite"]
__version__ = "0.1.0"
