"""Data model and file I/O for sentence-segmented annotated corpora.

A corpus is stored as JSON Lines with one document per line::

    {
      "doc_id": "...",
      "text": "...",                      # optional raw document text
      "sentences": [
        {
          "tokens": ["Twelve", "adults", ...],
          "offsets": [[0, 6], [7, 13], ...],   # optional char spans into text
          "crowd": {
            "population": {"ann_1": [[0, 2]], "ann_2": []},
            ...
          },
          "expert": {"population": [[0, 2]]},      # optional gold layer
          "aggregated": {"population": [[0, 2]]}   # optional aggregated layer
        },
        ...
      ]
    }

Span endpoints are half-open token indices.  The annotator map for a given
label type lists every worker who annotated that document for that type;
workers who marked nothing in a sentence appear with an empty span list, so
per-sentence majority denominators can be read off the record directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping

from sent2span.errors import CorpusError

__all__ = [
    "PicoType",
    "Span",
    "Token",
    "SentenceRecord",
    "Corpus",
    "CorpusError",
    "tokenize",
    "split_sentences",
    "load_corpus",
    "save_corpus",
]


class PicoType(Enum):
    """The three annotation layers a sentence can carry."""

    POPULATION = "population"
    INTERVENTION = "intervention"
    OUTCOME = "outcome"


@dataclass(frozen=True, order=True)
class Span:
    """Half-open token index interval ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise CorpusError(f"invalid span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, other: "Span") -> bool:
        return self.start <= other.start and other.end <= self.end

    def token_indices(self) -> range:
        return range(self.start, self.end)


@dataclass(frozen=True)
class Token:
    """A surface token with its character extent in the source text."""

    text: str
    char_start: int
    char_end: int

    def __post_init__(self) -> None:
        if not self.text:
            raise CorpusError("empty token")
        if self.char_start < 0 or self.char_end <= self.char_start:
            raise CorpusError(
                f"invalid token offsets [{self.char_start}, {self.char_end})"
            )


@dataclass(frozen=True)
class SentenceRecord:
    """One sentence with its crowd layer and optional gold layers.

    ``crowd`` maps label type -> annotator id -> set of spans.  ``expert``
    and ``aggregated`` map label type -> set of spans and may be absent
    entirely (``None``) when the corpus carries no such layer.
    """

    doc_id: str
    sent_index: int
    tokens: tuple[Token, ...]
    crowd: Mapping[PicoType, Mapping[str, frozenset[Span]]]
    expert: Mapping[PicoType, frozenset[Span]] | None = None
    aggregated: Mapping[PicoType, frozenset[Span]] | None = None

    def __post_init__(self) -> None:
        if not self.tokens:
            raise CorpusError(f"{self.doc_id}[{self.sent_index}]: empty sentence")
        n = len(self.tokens)
        for layer in (self.expert, self.aggregated):
            if layer is None:
                continue
            for spans in layer.values():
                self._check_spans(spans, n)
        for per_annotator in self.crowd.values():
            for spans in per_annotator.values():
                self._check_spans(spans, n)

    def _check_spans(self, spans: frozenset[Span], n: int) -> None:
        for span in spans:
            if span.end > n:
                raise CorpusError(
                    f"{self.doc_id}[{self.sent_index}]: span "
                    f"[{span.start}, {span.end}) exceeds sentence length {n}"
                )

    @property
    def token_texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    def annotators(self, pico: PicoType) -> Mapping[str, frozenset[Span]]:
        """Annotator map for one label type; empty if nobody covered it."""
        return self.crowd.get(pico, {})


@dataclass(frozen=True)
class Corpus:
    """A flat list of sentences plus per-document raw text where known."""

    sentences: tuple[SentenceRecord, ...]
    doc_texts: Mapping[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[SentenceRecord]:
        return iter(self.sentences)

    @property
    def doc_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.sentences:
            seen.setdefault(s.doc_id, None)
        return list(seen)

    def annotator_roster(self, pico: PicoType) -> frozenset[str]:
        ids: set[str] = set()
        for s in self.sentences:
            ids.update(s.annotators(pico))
        return frozenset(ids)


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------

_LETTER, _DIGIT, _OTHER = 0, 1, 2


def _char_class(ch: str) -> int:
    if ch.isalpha():
        return _LETTER
    if ch.isdigit():
        return _DIGIT
    return _OTHER


def tokenize(text: str) -> list[Token]:
    """Split text into tokens with character offsets.

    Tokens are maximal runs of a single character class (letters, digits,
    or other non-space symbols), so ``n=120 patients.`` becomes
    ``n`` ``=`` ``120`` ``patients`` ``.``.  Whitespace never appears in a
    token.
    """
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        cls = _char_class(text[i])
        j = i + 1
        while j < n and not text[j].isspace() and _char_class(text[j]) == cls:
            j += 1
        tokens.append(Token(text[i:j], i, j))
        i = j
    return tokens


# ---------------------------------------------------------------------------
# Sentence splitting
# ---------------------------------------------------------------------------

_SENT_END = {".", "!", "?"}

# Common abbreviations that should not terminate a sentence, stored
# lowercased and without the trailing period.
_ABBREVIATIONS = {
    "al",
    "approx",
    "ca",
    "cf",
    "dr",
    "e.g",
    "etc",
    "fig",
    "i.e",
    "mr",
    "mrs",
    "ms",
    "no",
    "prof",
    "resp",
    "st",
    "vs",
}


def _word_before(text: str, period_at: int) -> str:
    """The letters-and-dots run that ends just before ``text[period_at]``."""
    j = period_at
    while j > 0 and (text[j - 1].isalpha() or text[j - 1] == "."):
        j -= 1
    return text[j:period_at]


def _is_abbreviation(text: str, period_at: int) -> bool:
    word = _word_before(text, period_at).lower().strip(".")
    if not word:
        return False
    # Single letters handle initials such as "J. Smith".
    return word in _ABBREVIATIONS or len(word) == 1


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Return character intervals ``[start, end)`` of the sentences in text.

    A sentence ends at ``.``, ``!`` or ``?`` when followed by whitespace and
    an upper-case letter or digit, unless the period closes a known
    abbreviation.  Intervals are ordered, non-overlapping, and cover every
    non-whitespace character.
    """
    bounds: list[tuple[int, int]] = []
    n = len(text)
    start = 0
    while start < n and text[start].isspace():
        start += 1
    if start == n:
        return []
    i = start
    while i < n:
        ch = text[i]
        if ch in _SENT_END:
            if ch == "." and _is_abbreviation(text, i):
                i += 1
                continue
            j = i + 1
            while j < n and text[j].isspace():
                j += 1
            if j < n and j > i + 1 and (text[j].isupper() or text[j].isdigit()):
                bounds.append((start, i + 1))
                start = j
                i = j
                continue
        i += 1
    tail = n
    while tail > start and text[tail - 1].isspace():
        tail -= 1
    if tail > start:
        bounds.append((start, tail))
    return bounds


# ---------------------------------------------------------------------------
# JSON Lines I/O
# ---------------------------------------------------------------------------


def _reject_duplicate_keys(pairs: list[tuple[str, object]]) -> dict:
    out: dict = {}
    for key, value in pairs:
        if key in out:
            raise CorpusError(f"duplicate key {key!r}")
        out[key] = value
    return out


def _parse_span_list(raw: object, where: str) -> frozenset[Span]:
    if not isinstance(raw, list):
        raise CorpusError(f"{where}: expected a list of [start, end] pairs")
    spans = set()
    for item in raw:
        if (
            not isinstance(item, list)
            or len(item) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in item)
        ):
            raise CorpusError(f"{where}: bad span {item!r}")
        try:
            spans.add(Span(item[0], item[1]))
        except CorpusError as exc:
            raise CorpusError(f"{where}: {exc}") from None
    return frozenset(spans)


def _parse_layer(raw: object, where: str) -> dict[PicoType, frozenset[Span]]:
    if not isinstance(raw, dict):
        raise CorpusError(f"{where}: expected an object keyed by label type")
    layer: dict[PicoType, frozenset[Span]] = {}
    for key, value in raw.items():
        try:
            pico = PicoType(key)
        except ValueError:
            raise CorpusError(f"{where}: unknown label type {key!r}") from None
        layer[pico] = _parse_span_list(value, f"{where}.{key}")
    return layer


def _parse_crowd(
    raw: object, where: str
) -> dict[PicoType, dict[str, frozenset[Span]]]:
    if not isinstance(raw, dict):
        raise CorpusError(f"{where}: expected an object keyed by label type")
    crowd: dict[PicoType, dict[str, frozenset[Span]]] = {}
    for key, per_annotator in raw.items():
        try:
            pico = PicoType(key)
        except ValueError:
            raise CorpusError(f"{where}: unknown label type {key!r}") from None
        if not isinstance(per_annotator, dict):
            raise CorpusError(f"{where}.{key}: expected annotator -> spans map")
        crowd[pico] = {
            ann: _parse_span_list(spans, f"{where}.{key}.{ann}")
            for ann, spans in per_annotator.items()
        }
    return crowd


def _parse_sentence(raw: object, doc_id: str, sent_index: int) -> SentenceRecord:
    where = f"{doc_id}[{sent_index}]"
    if not isinstance(raw, dict):
        raise CorpusError(f"{where}: sentence must be an object")
    token_texts = raw.get("tokens")
    if (
        not isinstance(token_texts, list)
        or not token_texts
        or not all(isinstance(t, str) and t for t in token_texts)
    ):
        raise CorpusError(f"{where}: 'tokens' must be a non-empty list of strings")
    offsets = raw.get("offsets")
    if offsets is not None:
        if not isinstance(offsets, list) or len(offsets) != len(token_texts):
            raise CorpusError(f"{where}: 'offsets' must align with 'tokens'")
        tokens = []
        prev_end = -1
        for text, pair in zip(token_texts, offsets):
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or not all(isinstance(v, int) for v in pair)
            ):
                raise CorpusError(f"{where}: bad offset {pair!r}")
            if pair[0] < prev_end:
                raise CorpusError(f"{where}: offsets overlap or go backwards")
            tokens.append(Token(text, pair[0], pair[1]))
            prev_end = pair[1]
    else:
        # Synthesize offsets into the space-joined token string.
        tokens = []
        pos = 0
        for text in token_texts:
            tokens.append(Token(text, pos, pos + len(text)))
            pos += len(text) + 1
    crowd = _parse_crowd(raw.get("crowd", {}), f"{where}.crowd")
    expert = None
    if "expert" in raw:
        expert = _parse_layer(raw["expert"], f"{where}.expert")
    aggregated = None
    if "aggregated" in raw:
        aggregated = _parse_layer(raw["aggregated"], f"{where}.aggregated")
    return SentenceRecord(
        doc_id=doc_id,
        sent_index=sent_index,
        tokens=tuple(tokens),
        crowd=crowd,
        expert=expert,
        aggregated=aggregated,
    )


def load_corpus(path: str | Path) -> Corpus:
    """Read a JSON Lines corpus file, validating every record.

    Documents that carry only raw ``text`` (no ``sentences``) are segmented
    and tokenized here, which is how plain text enters the pipeline.
    """
    sentences: list[SentenceRecord] = []
    doc_texts: dict[str, str] = {}
    seen_docs: set[str] = set()
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line, object_pairs_hook=_reject_duplicate_keys)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: not valid JSON: {exc}") from None
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            try:
                doc_id = raw.get("doc_id") if isinstance(raw, dict) else None
                if not isinstance(doc_id, str) or not doc_id:
                    raise CorpusError("'doc_id' must be a non-empty string")
                if doc_id in seen_docs:
                    raise CorpusError(f"duplicate doc_id {doc_id!r}")
                seen_docs.add(doc_id)
                doc_text = raw.get("text")
                if doc_text is not None and not isinstance(doc_text, str):
                    raise CorpusError("'text' must be a string")
                if doc_text is not None:
                    doc_texts[doc_id] = doc_text
                if "sentences" in raw:
                    if not isinstance(raw["sentences"], list):
                        raise CorpusError("'sentences' must be a list")
                    for k, raw_sent in enumerate(raw["sentences"]):
                        sentences.append(_parse_sentence(raw_sent, doc_id, k))
                elif doc_text is not None:
                    for k, (a, b) in enumerate(split_sentences(doc_text)):
                        toks = tuple(
                            Token(t.text, t.char_start + a, t.char_end + a)
                            for t in tokenize(doc_text[a:b])
                        )
                        sentences.append(
                            SentenceRecord(
                                doc_id=doc_id, sent_index=k, tokens=toks, crowd={}
                            )
                        )
                else:
                    raise CorpusError("document has neither 'sentences' nor 'text'")
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return Corpus(sentences=tuple(sentences), doc_texts=doc_texts)


def _span_list_json(spans: frozenset[Span]) -> list[list[int]]:
    return [[s.start, s.end] for s in sorted(spans)]


def _sentence_json(sentence: SentenceRecord) -> dict:
    out: dict = {
        "tokens": sentence.token_texts,
        "offsets": [[t.char_start, t.char_end] for t in sentence.tokens],
        "crowd": {
            pico.value: {
                ann: _span_list_json(spans)
                for ann, spans in sorted(per_annotator.items())
            }
            for pico, per_annotator in sorted(
                sentence.crowd.items(), key=lambda kv: kv[0].value
            )
        },
    }
    for name, layer in (("expert", sentence.expert), ("aggregated", sentence.aggregated)):
        if layer is not None:
            out[name] = {
                pico.value: _span_list_json(spans)
                for pico, spans in sorted(layer.items(), key=lambda kv: kv[0].value)
            }
    return out


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus in canonical form.

    Canonical means: one document per line in first-seen order, sentences by
    index, sorted keys, sorted span lists, explicit offsets, no extra
    whitespace.  Loading and re-saving a canonical file reproduces it byte
    for byte, which keeps pipeline outputs diffable.
    """
    by_doc: dict[str, list[SentenceRecord]] = {}
    for sentence in corpus.sentences:
        by_doc.setdefault(sentence.doc_id, []).append(sentence)
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for doc_id, sents in by_doc.items():
            sents = sorted(sents, key=lambda s: s.sent_index)
            doc: dict = {"doc_id": doc_id}
            if doc_id in corpus.doc_texts:
                doc["text"] = corpus.doc_texts[doc_id]
            doc["sentences"] = [_sentence_json(s) for s in sents]
            fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False))
            fh.write("\n")
