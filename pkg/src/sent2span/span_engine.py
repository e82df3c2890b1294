"""Candidate span generation, masked scoring, and nested-span elimination.

A candidate span's contribution is how much the sentence's positive-class
score drops when the span is masked out::

    contribution(i, j) = score(tokens) - score(tokens with [i, j) masked)

Longer spans are skipped without scoring when they split into two adjacent
parts that were both already ruled out, so the scorer sees far fewer masked
sentences than the raw candidate count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from sent2span.corpus import PicoType, Span
from sent2span.errors import ConfigurationError
from sent2span.scorer import ScoreResult, score_masked_batch, score_sentence

__all__ = [
    "DEFAULT_MAX_SPAN_LEN",
    "SpanConfig",
    "ScoredSpan",
    "EliminationSet",
    "candidate_count",
    "enumerate_candidates",
    "eliminate_nested",
    "score_all_candidates",
]

# Per-type caps on candidate span length, in tokens.  Population mentions
# run long ("adults aged 18 to 65 with poorly controlled ..."), interventions
# are short noun phrases, outcomes sit in between.
DEFAULT_MAX_SPAN_LEN: Mapping[PicoType, int] = {
    PicoType.POPULATION: 20,
    PicoType.INTERVENTION: 7,
    PicoType.OUTCOME: 10,
}

SCORE_MODES = ("logit", "probability")


@dataclass(frozen=True)
class SpanConfig:
    """Knobs for candidate generation and selection."""

    max_span_len: Mapping[PicoType, int] = field(
        default_factory=lambda: dict(DEFAULT_MAX_SPAN_LEN)
    )
    top_k: int = 2
    score_mode: str = "logit"
    batch_size: int = 64
    eliminate: bool = True

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ConfigurationError("top_k must be >= 1")
        if self.score_mode not in SCORE_MODES:
            raise ConfigurationError(
                f"score_mode must be one of {SCORE_MODES}, got {self.score_mode!r}"
            )
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        for pico, cap in self.max_span_len.items():
            if cap < 1:
                raise ConfigurationError(f"max span length for {pico.value} must be >= 1")

    def max_len_for(self, pico: PicoType) -> int:
        try:
            return self.max_span_len[pico]
        except KeyError:
            raise ConfigurationError(
                f"no max span length configured for {pico.value}"
            ) from None


@dataclass(frozen=True)
class ScoredSpan:
    """A surviving candidate with its masked score and contribution."""

    span: Span
    base_score: float
    masked_score: float

    @property
    def contribution(self) -> float:
        return self.base_score - self.masked_score


@dataclass(frozen=True)
class EliminationSet:
    """Spans ruled out without full scoring, plus bookkeeping counters."""

    eliminated: frozenset[Span]
    n_tokens: int
    max_len: int

    @property
    def total_candidates(self) -> int:
        return candidate_count(self.n_tokens, self.max_len)

    def __contains__(self, span: Span) -> bool:
        return span in self.eliminated


def candidate_count(n_tokens: int, max_len: int) -> int:
    """Number of spans of length <= ``max_len`` in a sentence of ``n_tokens``.

    With the cap clamped to the sentence length this is
    ``m * (2n - m + 1) / 2``; an uncapped sentence has the familiar
    ``n * (n + 1) / 2`` spans.
    """
    if n_tokens < 0 or max_len < 0:
        raise ValueError("lengths must be non-negative")
    m = min(max_len, n_tokens)
    return m * (2 * n_tokens - m + 1) // 2


def enumerate_candidates(n_tokens: int, max_len: int) -> list[Span]:
    """All candidate spans, shortest first, then by start position."""
    m = min(max_len, n_tokens)
    return [
        Span(start, start + length)
        for length in range(1, m + 1)
        for start in range(n_tokens - length + 1)
    ]


def eliminate_nested(
    contributions: Mapping[Span, float], n_tokens: int, max_len: int
) -> EliminationSet:
    """Compute the full set of spans ruled out by the split rule.

    Seeds: single tokens whose contribution is negative.  Closure: a span is
    ruled out when some interior split point cuts it into a left and right
    part that are both ruled out.  ``contributions`` must cover every single
    token of the sentence.
    """
    for i in range(n_tokens):
        if Span(i, i + 1) not in contributions:
            raise ValueError(f"missing contribution for token {i}")
    m = min(max_len, n_tokens)
    ruled_out: set[Span] = {
        Span(i, i + 1) for i in range(n_tokens) if contributions[Span(i, i + 1)] < 0.0
    }
    for length in range(2, m + 1):
        for start in range(n_tokens - length + 1):
            end = start + length
            for split in range(start + 1, end):
                if Span(start, split) in ruled_out and Span(split, end) in ruled_out:
                    ruled_out.add(Span(start, end))
                    break
    return EliminationSet(frozenset(ruled_out), n_tokens=n_tokens, max_len=max_len)


def score_all_candidates(
    scorer,
    tokens: Sequence[str],
    pico: PicoType,
    config: SpanConfig = SpanConfig(),
) -> tuple[list[ScoredSpan], EliminationSet, ScoreResult]:
    """Score every surviving candidate span of one sentence.

    Returns the scored spans (shortest first, then by start), the set of
    spans that were eliminated instead of scored, and the unmasked base
    result.  Every candidate lands in exactly one of the two collections.
    With ``config.eliminate`` off, everything is scored.

    The scorer's reported ``effective_length`` caps the sentence: a scorer
    that only consumed the first ``L`` tokens yields candidates over those
    ``L`` tokens only.
    """
    base = score_sentence(scorer, tokens)
    n = min(base.effective_length, len(tokens))
    max_len = min(config.max_len_for(pico), n)

    def value(result: ScoreResult) -> float:
        if config.score_mode == "probability":
            return result.probability
        return result.positive_score

    base_value = value(base)
    scored: list[ScoredSpan] = []
    contributions: dict[Span, float] = {}

    def score_spans(spans: list[Span]) -> list[float]:
        values: list[float] = []
        for lo in range(0, len(spans), config.batch_size):
            chunk = spans[lo : lo + config.batch_size]
            results = score_masked_batch(scorer, tokens, chunk)
            values.extend(value(r) for r in results)
        return values

    # Single tokens are always scored: their signs seed the elimination.
    singles = [Span(i, i + 1) for i in range(n)]
    for span, masked_value in zip(singles, score_spans(singles)):
        contributions[span] = base_value - masked_value
        scored.append(ScoredSpan(span=span, base_score=base_value, masked_score=masked_value))

    ruled_out: set[Span] = set()
    if config.eliminate:
        ruled_out = {s for s in singles if contributions[s] < 0.0}
        scored = [ss for ss in scored if ss.span not in ruled_out]

    for length in range(2, max_len + 1):
        pending: list[Span] = []
        for start in range(n - length + 1):
            span = Span(start, start + length)
            if config.eliminate and _splits_into_ruled_out(span, ruled_out):
                ruled_out.add(span)
            else:
                pending.append(span)
        for span, masked_value in zip(pending, score_spans(pending)):
            contributions[span] = base_value - masked_value
            scored.append(
                ScoredSpan(span=span, base_score=base_value, masked_score=masked_value)
            )

    elimination = EliminationSet(frozenset(ruled_out), n_tokens=n, max_len=max_len)
    return scored, elimination, base


def _splits_into_ruled_out(span: Span, ruled_out: set[Span]) -> bool:
    for split in range(span.start + 1, span.end):
        if Span(span.start, split) in ruled_out and Span(split, span.end) in ruled_out:
            return True
    return False
