"""Synthetic corpora with planted answer spans, for end-to-end checks.

Positive sentences get one keyword phrase inserted at a random position and
that phrase becomes the expert span.  A small simulated crowd marks the
phrase with per-annotator reliability, so the weak-label policies produce
realistically noisy sentence labels: a lenient policy catches nearly every
positive sentence, a strict majority policy misses some.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sent2span.corpus import Corpus, PicoType, SentenceRecord, Span, Token

__all__ = ["SyntheticConfig", "generate_corpus"]

_FILLER = (
    "the a this that study trial group received after before during were was "
    "randomly assigned followed measured baseline weeks months results showed "
    "significant compared control primary secondary analysis data between both "
    "arms period visit clinic report mean total change rate level value score "
    "observed recorded collected reviewed included overall further also"
).split()

_PHRASES: dict[PicoType, tuple[tuple[str, ...], ...]] = {
    PicoType.POPULATION: (
        ("elderly", "diabetic", "patients"),
        ("pregnant", "women"),
        ("children", "with", "asthma"),
        ("adults", "with", "chronic", "migraine"),
        ("hypertensive", "smokers"),
        ("obese", "adolescents"),
        ("stroke", "survivors"),
        ("infants", "born", "preterm"),
    ),
    PicoType.INTERVENTION: (
        ("daily", "aspirin"),
        ("low", "dose", "metformin"),
        ("cognitive", "behavioral", "therapy"),
        ("inhaled", "corticosteroids"),
        ("vitamin", "d", "supplementation"),
        ("intravenous", "ketamine"),
        ("nicotine", "patch"),
        ("standard", "physiotherapy", "sessions"),
    ),
    PicoType.OUTCOME: (
        ("systolic", "blood", "pressure"),
        ("pain", "intensity"),
        ("hospital", "readmission", "rates"),
        ("fasting", "glucose", "levels"),
        ("quality", "of", "life", "scores"),
        ("sleep", "duration"),
        ("relapse", "frequency"),
        ("walking", "speed"),
    ),
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_sentences: int = 500
    pico: PicoType = PicoType.POPULATION
    seed: int = 0
    positive_rate: float = 0.5
    min_filler: int = 8
    max_filler: int = 14
    sentences_per_doc: int = 5
    # Probability that each simulated annotator marks the planted phrase in
    # a positive sentence.  Unequal reliabilities are what separate the
    # lenient and majority label policies.
    annotator_hit_rates: tuple[float, ...] = (0.9, 0.6, 0.3)
    # Chance that an annotator marks a random span in a negative sentence.
    annotator_false_rate: float = 0.01
    doc_prefix: str = "syn"


def _make_sentence(
    rng: np.random.Generator,
    config: SyntheticConfig,
    doc_id: str,
    sent_index: int,
) -> SentenceRecord:
    n_filler = int(rng.integers(config.min_filler, config.max_filler + 1))
    words = [str(rng.choice(_FILLER)) for _ in range(n_filler)]
    positive = bool(rng.random() < config.positive_rate)

    expert: dict[PicoType, frozenset[Span]] = {config.pico: frozenset()}
    phrase_span: Span | None = None
    if positive:
        phrases = _PHRASES[config.pico]
        phrase = phrases[int(rng.integers(len(phrases)))]
        at = int(rng.integers(0, len(words) + 1))
        words = words[:at] + list(phrase) + words[at:]
        phrase_span = Span(at, at + len(phrase))
        expert[config.pico] = frozenset({phrase_span})

    per_annotator: dict[str, frozenset[Span]] = {}
    marked = 0
    for idx, hit_rate in enumerate(config.annotator_hit_rates):
        ann = f"ann_{idx}"
        spans: set[Span] = set()
        if phrase_span is not None and rng.random() < hit_rate:
            spans.add(phrase_span)
            marked += 1
        elif phrase_span is None and rng.random() < config.annotator_false_rate:
            start = int(rng.integers(0, len(words)))
            spans.add(Span(start, start + 1))
        per_annotator[ann] = frozenset(spans)

    # Aggregated layer: the phrase survives aggregation when at least two
    # annotators marked it.
    aggregated = frozenset({phrase_span}) if phrase_span is not None and marked >= 2 else frozenset()

    pos = 0
    tokens = []
    for w in words:
        tokens.append(Token(w, pos, pos + len(w)))
        pos += len(w) + 1
    return SentenceRecord(
        doc_id=doc_id,
        sent_index=sent_index,
        tokens=tuple(tokens),
        crowd={config.pico: per_annotator},
        expert=expert,
        aggregated={config.pico: aggregated},
    )


def generate_corpus(config: SyntheticConfig = SyntheticConfig()) -> Corpus:
    """Build a deterministic corpus of planted-phrase sentences."""
    rng = np.random.default_rng(config.seed)
    sentences = []
    for i in range(config.n_sentences):
        doc_id = f"{config.doc_prefix}_{i // config.sentences_per_doc:04d}"
        sentences.append(_make_sentence(rng, config, doc_id, i % config.sentences_per_doc))
    return Corpus(sentences=tuple(sentences))
