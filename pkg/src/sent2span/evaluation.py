"""Token-level and sentence-level evaluation against expert annotations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from sent2span.corpus import Corpus, PicoType, SentenceRecord, Span
from sent2span.inference import DetectionResult

__all__ = [
    "TokenMetrics",
    "SentenceMetrics",
    "ErrorCounts",
    "ReductionStats",
    "EvaluationReport",
    "span_token_set",
    "token_counts",
    "prf_from_counts",
    "token_prf",
    "sentence_metrics",
    "classify_errors",
    "evaluate_detections",
    "render_report",
]


def span_token_set(spans: Iterable[Span]) -> set[int]:
    """Union of the token indices covered by ``spans``."""
    covered: set[int] = set()
    for span in spans:
        covered.update(span.token_indices())
    return covered


def token_counts(
    predicted: Iterable[Span], gold: Iterable[Span]
) -> tuple[int, int, int]:
    """True/false positive and false negative token counts for one sentence."""
    p = span_token_set(predicted)
    g = span_token_set(gold)
    tp = len(p & g)
    return tp, len(p) - tp, len(g) - tp


def prf_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1; any 0/0 is defined as 0."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class TokenMetrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "TokenMetrics":
        p, r, f = prf_from_counts(tp, fp, fn)
        return cls(tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f)


def token_prf(
    instances: Iterable[tuple[Iterable[Span], Iterable[Span]]]
) -> TokenMetrics:
    """Micro-averaged token metrics over (predicted, gold) span pairs.

    Counts are summed across all instances before the ratios are taken, so
    long sentences weigh more than short ones.
    """
    tp = fp = fn = 0
    for predicted, gold in instances:
        a, b, c = token_counts(predicted, gold)
        tp += a
        fp += b
        fn += c
    return TokenMetrics.from_counts(tp, fp, fn)


@dataclass(frozen=True)
class SentenceMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float


def sentence_metrics(
    predicted: Sequence[bool], gold: Sequence[bool]
) -> SentenceMetrics:
    """Binary classification metrics for sentence-level decisions."""
    if len(predicted) != len(gold):
        raise ValueError("predicted and gold differ in length")
    tp = sum(1 for p, g in zip(predicted, gold) if p and g)
    fp = sum(1 for p, g in zip(predicted, gold) if p and not g)
    fn = sum(1 for p, g in zip(predicted, gold) if not p and g)
    tn = len(gold) - tp - fp - fn
    precision, recall, f1 = prf_from_counts(tp, fp, fn)
    accuracy = (tp + tn) / len(gold) if gold else 0.0
    return SentenceMetrics(
        tp=tp, fp=fp, fn=fn, tn=tn,
        accuracy=accuracy, precision=precision, recall=recall, f1=f1,
    )


@dataclass(frozen=True)
class ErrorCounts:
    """Span-level error taxonomy.

    Every predicted span lands in exactly one bucket: an exact match, a
    boundary error (one span properly contains the other), an overlap error
    (they straddle), or a false positive (no gold overlap at all).  Gold
    spans that no prediction touches are the false negatives.
    """

    exact: int = 0
    boundary: int = 0
    overlap: int = 0
    false_positive: int = 0
    false_negative: int = 0

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            exact=self.exact + other.exact,
            boundary=self.boundary + other.boundary,
            overlap=self.overlap + other.overlap,
            false_positive=self.false_positive + other.false_positive,
            false_negative=self.false_negative + other.false_negative,
        )


def _overlap_size(a: Span, b: Span) -> int:
    return max(0, min(a.end, b.end) - max(a.start, b.start))


def classify_errors(predicted: Iterable[Span], gold: Iterable[Span]) -> ErrorCounts:
    """Bucket each predicted span against its best-overlapping gold span.

    Best means maximal token overlap, with ties going to the gold span that
    starts (then ends) earliest.
    """
    predicted = list(predicted)
    # Ordered by position so that on tied overlap the earliest gold span wins.
    gold = sorted(gold, key=lambda s: (s.start, s.end))
    exact = boundary = overlap_err = false_pos = 0
    for pred in predicted:
        best: Span | None = None
        best_size = 0
        for g in gold:
            size = _overlap_size(pred, g)
            if size > best_size:
                best = g
                best_size = size
        if best is None:
            false_pos += 1
            continue
        if pred == best:
            exact += 1
        elif best.contains(pred) or pred.contains(best):
            boundary += 1
        else:
            overlap_err += 1
    false_neg = sum(
        1 for g in gold if all(_overlap_size(g, p) == 0 for p in predicted)
    )
    return ErrorCounts(
        exact=exact,
        boundary=boundary,
        overlap=overlap_err,
        false_positive=false_pos,
        false_negative=false_neg,
    )


@dataclass(frozen=True)
class ReductionStats:
    """How much work the elimination rule saved across a run."""

    eliminated: int
    total_candidates: int

    @property
    def ratio(self) -> float:
        return self.eliminated / self.total_candidates if self.total_candidates else 0.0

    def __add__(self, other: "ReductionStats") -> "ReductionStats":
        return ReductionStats(
            eliminated=self.eliminated + other.eliminated,
            total_candidates=self.total_candidates + other.total_candidates,
        )


@dataclass(frozen=True)
class EvaluationReport:
    pico: PicoType
    token: TokenMetrics
    sentence: SentenceMetrics
    errors: ErrorCounts
    reduction: ReductionStats | None
    n_sentences: int


def _expert_spans(sentence: SentenceRecord, pico: PicoType) -> frozenset[Span] | None:
    if sentence.expert is None:
        return None
    return sentence.expert.get(pico, frozenset())


def evaluate_detections(
    corpus: Corpus,
    detections: Iterable[DetectionResult],
    pico: PicoType,
    reduction: ReductionStats | None = None,
) -> EvaluationReport:
    """Score a detection run against the corpus's expert layer.

    Sentences without any expert layer are skipped; with an expert layer but
    no spans for this label type, the gold set is empty.  A sentence counts
    as gold-positive when its expert spans are non-empty.
    """
    by_key: dict[tuple[str, int], DetectionResult] = {}
    for det in detections:
        if det.pico is pico:
            by_key[(det.doc_id, det.sent_index)] = det

    pairs: list[tuple[list[Span], frozenset[Span]]] = []
    pred_flags: list[bool] = []
    gold_flags: list[bool] = []
    errors = ErrorCounts()
    for sentence in corpus:
        gold = _expert_spans(sentence, pico)
        if gold is None:
            continue
        det = by_key.get((sentence.doc_id, sentence.sent_index))
        selected = list(det.selected) if det is not None else []
        positive = det.sentence_positive if det is not None else False
        pairs.append((selected, gold))
        pred_flags.append(positive)
        gold_flags.append(bool(gold))
        errors = errors + classify_errors(selected, gold)
    return EvaluationReport(
        pico=pico,
        token=token_prf(pairs),
        sentence=sentence_metrics(pred_flags, gold_flags),
        errors=errors,
        reduction=reduction,
        n_sentences=len(pairs),
    )


def render_report(report: EvaluationReport) -> str:
    """Plain-text summary table for one label type."""
    lines = [
        f"== {report.pico.value} ({report.n_sentences} sentences) ==",
        "token level:",
        f"  precision {report.token.precision:.4f}"
        f"  recall {report.token.recall:.4f}"
        f"  f1 {report.token.f1:.4f}"
        f"  (tp={report.token.tp} fp={report.token.fp} fn={report.token.fn})",
        "sentence level:",
        f"  accuracy {report.sentence.accuracy:.4f}"
        f"  precision {report.sentence.precision:.4f}"
        f"  recall {report.sentence.recall:.4f}"
        f"  f1 {report.sentence.f1:.4f}",
        "span errors:",
        f"  exact {report.errors.exact}"
        f"  boundary {report.errors.boundary}"
        f"  overlap {report.errors.overlap}"
        f"  spurious {report.errors.false_positive}"
        f"  missed {report.errors.false_negative}",
    ]
    if report.reduction is not None:
        lines.append(
            f"candidate reduction: {report.reduction.eliminated} of "
            f"{report.reduction.total_candidates} skipped "
            f"({report.reduction.ratio:.4f})"
        )
    return "\n".join(lines)
