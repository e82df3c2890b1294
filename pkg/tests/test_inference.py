"""Top-K selection and gated per-sentence detection."""

from __future__ import annotations

import numpy as np
import pytest

from sent2span.corpus import PicoType, Span
from sent2span.errors import ConfigurationError
from sent2span.inference import (
    DetectionResult,
    GateMode,
    detect_spans,
    detect_spans_full,
    top_k_select,
)
from sent2span.scorer import BaselineScorerModel
from sent2span.span_engine import ScoredSpan, SpanConfig

from tests._oracles import top_k_oracle
from tests.test_corpus import make_sentence
from tests.test_span_engine import StubScorer

POP = PicoType.POPULATION


def scored(*items):
    return [
        ScoredSpan(span=Span(a, b), base_score=0.0, masked_score=-v)
        for (a, b), v in items
    ]


class TestTopKSelect:
    def test_greedy_skips_overlaps(self):
        candidates = scored(
            ((0, 2), 5.0), ((1, 3), 4.0), ((4, 5), 3.0), ((0, 1), 2.0)
        )
        assert top_k_select(candidates, 2) == [Span(0, 2), Span(4, 5)]

    def test_non_positive_contributions_never_selected(self):
        candidates = scored(((0, 2), 0.0), ((2, 4), -1.0))
        assert top_k_select(candidates, 3) == []

    def test_ties_prefer_earlier_start_then_shorter(self):
        candidates = scored(((2, 4), 1.0), ((0, 2), 1.0))
        assert top_k_select(candidates, 1) == [Span(0, 2)]
        candidates = scored(((1, 4), 1.0), ((1, 3), 1.0))
        assert top_k_select(candidates, 1) == [Span(1, 3)]

    def test_k_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            top_k_select([], 0)

    def test_never_returns_more_than_k(self):
        candidates = scored(*(((i, i + 1), float(i + 1)) for i in range(10)))
        assert len(top_k_select(candidates, 3)) == 3

    def test_matches_literal_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            n = int(rng.integers(1, 25))
            count = int(rng.integers(0, 30))
            seen = set()
            candidates = []
            for _ in range(count):
                start = int(rng.integers(0, n))
                end = int(rng.integers(start + 1, min(n, start + 6) + 1))
                if (start, end) in seen:
                    continue
                seen.add((start, end))
                candidates.append(((start, end), float(rng.normal())))
            k = int(rng.integers(1, 5))
            got = top_k_select(scored(*candidates), k)
            want = top_k_oracle(
                [(Span(a, b), v) for (a, b), v in candidates], k
            )
            assert got == want

    def test_selection_grows_as_a_prefix_in_k(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            candidates = []
            for _ in range(15):
                start = int(rng.integers(0, 12))
                end = start + int(rng.integers(1, 4))
                candidates.append(((start, end), float(rng.normal())))
            spans = scored(*candidates)
            previous: list[Span] = []
            for k in range(1, 6):
                current = top_k_select(spans, k)
                assert current[: len(previous)] == previous
                previous = current


def stub_with_phrase(n=8, phrase=(2, 5)):
    """Positive contributions inside the phrase, negative elsewhere."""
    contribs = {}
    for i in range(n):
        inside = phrase[0] <= i < phrase[1]
        contribs[(i, i + 1)] = 1.0 if inside else -0.5
    contribs[phrase] = 5.0
    return StubScorer(contribs, base=3.0)


def crowd_sentence(n_tokens, marks, aggregated=None):
    crowd = {
        POP: {
            ann: frozenset(Span(a, b) for a, b in spans)
            for ann, spans in marks.items()
        }
    }
    kwargs = {"crowd": crowd}
    if aggregated is not None:
        kwargs["aggregated"] = {
            POP: frozenset(Span(a, b) for a, b in aggregated)
        }
    return make_sentence([f"t{i}" for i in range(n_tokens)], **kwargs)


class TestDetectSpans:
    def test_selects_the_planted_phrase(self):
        sentence = crowd_sentence(8, {"a": [(2, 5)]})
        result = detect_spans(
            sentence, stub_with_phrase(), POP, gate=GateMode.CROWD_MINOR
        )
        assert result.sentence_positive is True
        assert result.selected[0] == Span(2, 5)

    def test_negative_gate_skips_scoring_entirely(self):
        scorer = stub_with_phrase()
        sentence = crowd_sentence(8, {"a": [], "b": []})
        result, spans, elim, base = detect_spans_full(
            sentence, scorer, POP, gate=GateMode.CROWD_MINOR
        )
        assert result.sentence_positive is False
        assert result.selected == ()
        assert spans == [] and elim is None and base is None
        assert scorer.calls == []

    def test_crowd_major_gate(self):
        sentence = crowd_sentence(8, {"a": [(2, 5)], "b": [], "c": []})
        minor = detect_spans(
            sentence, stub_with_phrase(), POP, gate=GateMode.CROWD_MINOR
        )
        major = detect_spans(
            sentence, stub_with_phrase(), POP, gate=GateMode.CROWD_MAJOR
        )
        assert minor.sentence_positive is True
        assert major.sentence_positive is False

    def test_agg_gate_uses_stored_layer(self):
        with_spans = crowd_sentence(8, {}, aggregated=[(2, 5)])
        without = crowd_sentence(8, {}, aggregated=[])
        assert detect_spans(
            with_spans, stub_with_phrase(), POP, gate=GateMode.CROWD_AGG
        ).sentence_positive
        assert not detect_spans(
            without, stub_with_phrase(), POP, gate=GateMode.CROWD_AGG
        ).sentence_positive

    def test_agg_gate_without_layer_is_an_error(self):
        sentence = crowd_sentence(8, {"a": [(0, 1)]})
        with pytest.raises(ConfigurationError, match="aggregated"):
            detect_spans(sentence, stub_with_phrase(), POP, gate=GateMode.CROWD_AGG)

    def test_predicted_gate_asks_the_scorer(self):
        sentence = crowd_sentence(8, {})
        positive = detect_spans(sentence, stub_with_phrase(), POP)
        assert positive.sentence_positive is True  # base=3.0 vs 0 -> p > 0.5
        negative_scorer = StubScorer({}, base=-3.0)
        negative = detect_spans(sentence, negative_scorer, POP)
        assert negative.sentence_positive is False
        assert negative.selected == ()

    def test_zero_model_prediction_gate_is_negative(self):
        # p == 0.5 exactly: not strictly above the threshold.
        model = BaselineScorerModel.zeros(POP, feature_dim=64)
        sentence = crowd_sentence(5, {})
        result = detect_spans(sentence, model, POP)
        assert result.sentence_positive is False

    def test_selected_spans_respect_k_and_do_not_overlap(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            contribs = {(i, i + 1): float(rng.normal()) for i in range(n)}
            scorer = StubScorer(contribs, base=1.0)
            sentence = crowd_sentence(n, {"a": [(0, 1)]})
            k = int(rng.integers(1, 4))
            result = detect_spans(
                sentence, scorer, POP, SpanConfig(top_k=k), GateMode.CROWD_MINOR
            )
            assert len(result.selected) <= k
            for i, a in enumerate(result.selected):
                assert a.end <= n
                for b in result.selected[i + 1 :]:
                    assert not a.overlaps(b)

    def test_result_carries_identity(self):
        sentence = crowd_sentence(8, {"a": [(2, 5)]})
        result = detect_spans(
            sentence, stub_with_phrase(), POP, gate=GateMode.CROWD_MINOR
        )
        assert (result.doc_id, result.sent_index) == ("d1", 0)
        assert result.pico is POP
        assert result.gate is GateMode.CROWD_MINOR
