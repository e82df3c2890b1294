"""Weakly-supervised PICO span detection from sentence-level annotations."""

from sent2span.corpus import (
    Corpus,
    CorpusError,
    PicoType,
    SentenceRecord,
    Span,
    Token,
    load_corpus,
    save_corpus,
    split_sentences,
    tokenize,
)
from sent2span.weak_labels import LabelMode, derive_sentence_label

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusError",
    "LabelMode",
    "PicoType",
    "SentenceRecord",
    "Span",
    "Token",
    "derive_sentence_label",
    "load_corpus",
    "save_corpus",
    "split_sentences",
    "tokenize",
    "__version__",
]
