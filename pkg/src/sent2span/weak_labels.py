"""Sentence-level weak labels derived from crowd span annotations.

Three policies of increasing strictness:

* ``minor`` -- positive if at least one annotator marked at least one span.
* ``major`` -- positive if the annotators who marked something form a strict
  majority of everyone who annotated this document for the label type.
* ``agg`` -- positive if an externally aggregated span set touches the
  sentence (at least one token).
"""

from __future__ import annotations

from enum import Enum
from typing import Iterable

from sent2span.corpus import Corpus, PicoType, SentenceRecord, Span
from sent2span.errors import ConfigurationError

__all__ = [
    "LabelMode",
    "annotator_count",
    "derive_sentence_label",
    "label_corpus",
]


class LabelMode(Enum):
    AGG = "agg"
    MAJOR = "major"
    MINOR = "minor"


def annotator_count(sentence: SentenceRecord, pico: PicoType) -> int:
    """How many annotators covered this sentence's document for ``pico``.

    Relies on the corpus convention that every such annotator appears in the
    sentence's crowd map, with an empty span list if they marked nothing.
    """
    return len(sentence.annotators(pico))


def derive_sentence_label(
    sentence: SentenceRecord,
    pico: PicoType,
    mode: LabelMode,
    aggregated_spans: Iterable[Span] | None = None,
) -> bool:
    """Decide whether a sentence counts as positive for one label type."""
    if mode is LabelMode.AGG:
        if aggregated_spans is None:
            raise ConfigurationError(
                "label mode 'agg' needs aggregated spans, but none were supplied"
            )
        n = len(sentence.tokens)
        return any(span.start < n and span.end > 0 for span in aggregated_spans)

    per_annotator = sentence.annotators(pico)
    positives = sum(1 for spans in per_annotator.values() if spans)
    if mode is LabelMode.MINOR:
        return positives >= 1
    if mode is LabelMode.MAJOR:
        total = len(per_annotator)
        return positives * 2 > total
    raise ConfigurationError(f"unknown label mode {mode!r}")


def _aggregated_for(sentence: SentenceRecord, pico: PicoType) -> frozenset[Span] | None:
    if sentence.aggregated is None:
        return None
    return sentence.aggregated.get(pico, frozenset())


def label_corpus(
    corpus: Corpus, pico: PicoType, mode: LabelMode
) -> list[tuple[SentenceRecord, bool]]:
    """Apply one labeling policy to every sentence of a corpus."""
    out = []
    for sentence in corpus:
        agg = _aggregated_for(sentence, pico) if mode is LabelMode.AGG else None
        out.append((sentence, derive_sentence_label(sentence, pico, mode, agg)))
    return out
