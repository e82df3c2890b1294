"""Span selection and end-to-end per-sentence detection."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from sent2span.corpus import PicoType, SentenceRecord, Span
from sent2span.errors import ConfigurationError
from sent2span.scorer import ScoreResult, predict_sentence_class
from sent2span.span_engine import (
    EliminationSet,
    ScoredSpan,
    SpanConfig,
    score_all_candidates,
)
from sent2span.weak_labels import LabelMode, derive_sentence_label

__all__ = [
    "GateMode",
    "DetectionResult",
    "top_k_select",
    "detect_spans",
    "detect_spans_full",
]


class GateMode(Enum):
    """Where the sentence-level positive/negative decision comes from."""

    PREDICTED = "predicted"
    CROWD_AGG = "crowd_agg"
    CROWD_MAJOR = "crowd_major"
    CROWD_MINOR = "crowd_minor"


_GATE_TO_LABEL_MODE = {
    GateMode.CROWD_AGG: LabelMode.AGG,
    GateMode.CROWD_MAJOR: LabelMode.MAJOR,
    GateMode.CROWD_MINOR: LabelMode.MINOR,
}


@dataclass(frozen=True)
class DetectionResult:
    """Selected spans for one (sentence, label type) pair."""

    doc_id: str
    sent_index: int
    pico: PicoType
    sentence_positive: bool
    gate: GateMode
    selected: tuple[Span, ...]


def top_k_select(candidates: Iterable[ScoredSpan], k: int) -> list[Span]:
    """Greedy pick of up to ``k`` non-overlapping spans.

    Only spans with strictly positive contribution are considered: masking
    them must hurt the positive-class score, otherwise they carry no
    evidence.  Candidates are taken in order of descending contribution
    (ties: earlier start, then shorter span) and one that overlaps an
    already-picked span is skipped, not replaced.
    """
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    ordered = sorted(
        (c for c in candidates if c.contribution > 0.0),
        key=lambda c: (-c.contribution, c.span.start, len(c.span)),
    )
    picked: list[Span] = []
    for candidate in ordered:
        if len(picked) == k:
            break
        if any(candidate.span.overlaps(prev) for prev in picked):
            continue
        picked.append(candidate.span)
    return picked


def detect_spans(
    sentence: SentenceRecord,
    scorer,
    pico: PicoType,
    config: SpanConfig = SpanConfig(),
    gate: GateMode = GateMode.PREDICTED,
) -> DetectionResult:
    """Gate the sentence, then mask-score candidates and pick the top K."""
    result, _, _, _ = detect_spans_full(sentence, scorer, pico, config, gate)
    return result


def detect_spans_full(
    sentence: SentenceRecord,
    scorer,
    pico: PicoType,
    config: SpanConfig = SpanConfig(),
    gate: GateMode = GateMode.PREDICTED,
) -> tuple[DetectionResult, list[ScoredSpan], EliminationSet | None, ScoreResult | None]:
    """Like :func:`detect_spans` but keeps the per-span evidence around.

    Negative-gated sentences skip candidate scoring entirely and return an
    empty span list with no evidence.
    """
    if gate is GateMode.PREDICTED:
        positive, _ = predict_sentence_class(scorer, sentence.token_texts)
    else:
        mode = _GATE_TO_LABEL_MODE[gate]
        aggregated = None
        if mode is LabelMode.AGG:
            if sentence.aggregated is None:
                raise ConfigurationError(
                    f"{sentence.doc_id}[{sentence.sent_index}]: gate 'crowd_agg' "
                    "needs an aggregated layer in the corpus"
                )
            aggregated = sentence.aggregated.get(pico, frozenset())
        positive = derive_sentence_label(sentence, pico, mode, aggregated)

    if not positive:
        result = DetectionResult(
            doc_id=sentence.doc_id,
            sent_index=sentence.sent_index,
            pico=pico,
            sentence_positive=False,
            gate=gate,
            selected=(),
        )
        return result, [], None, None

    scored, elimination, base = score_all_candidates(
        scorer, sentence.token_texts, pico, config
    )
    selected = top_k_select(scored, config.top_k)
    result = DetectionResult(
        doc_id=sentence.doc_id,
        sent_index=sentence.sent_index,
        pico=pico,
        sentence_positive=True,
        gate=gate,
        selected=tuple(selected),
    )
    return result, scored, elimination, base
