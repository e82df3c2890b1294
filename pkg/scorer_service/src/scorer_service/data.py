"""Readers for the corpus and weak-label JSONL files produced upstream.

The files are the integration contract, so this module parses them itself
instead of importing the producer package.  A corpus line holds one
document::

    {"doc_id": "d1", "sentences": [{"tokens": ["...", ...], ...}, ...]}

A label file starts with a header line (recognizable by its "command" /
"config_hash" keys and the absence of "doc_id") followed by one record per
sentence::

    {"doc_id": "d1", "sent_index": 0, "pico": "population",
     "mode": "minor", "label": true}

Everything else in either file is ignored here; the service only needs
token sequences and their binary sentence labels.
"""

from __future__ import annotations

import json
from pathlib import Path

from scorer_service.errors import DataError

__all__ = [
    "iter_corpus_sentences",
    "read_labels",
    "load_training_set",
    "vocabulary",
]


def _read_lines(path: str | Path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{line_no}: invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise DataError(f"{path}:{line_no}: expected a JSON object")
        yield line_no, obj


def iter_corpus_sentences(path: str | Path):
    """Yield ``(doc_id, sent_index, tokens)`` for every sentence in the corpus."""
    seen_docs: set[str] = set()
    for line_no, obj in _read_lines(path):
        doc_id = obj.get("doc_id")
        if not isinstance(doc_id, str) or not doc_id:
            raise DataError(f"{path}:{line_no}: document without a doc_id")
        if doc_id in seen_docs:
            raise DataError(f"{path}:{line_no}: duplicate doc_id {doc_id!r}")
        seen_docs.add(doc_id)
        sentences = obj.get("sentences")
        if not isinstance(sentences, list):
            raise DataError(f"{path}:{line_no}: document {doc_id!r} has no sentence list")
        for sent_index, sent in enumerate(sentences):
            tokens = sent.get("tokens") if isinstance(sent, dict) else None
            if (
                not isinstance(tokens, list)
                or not tokens
                or not all(isinstance(t, str) and t for t in tokens)
            ):
                raise DataError(
                    f"{path}:{line_no}: sentence {sent_index} of {doc_id!r} "
                    "needs a non-empty list of string tokens"
                )
            yield doc_id, sent_index, list(tokens)


def read_labels(path: str | Path, pico: str) -> dict[tuple[str, int], bool]:
    """Sentence labels for one PICO type, keyed by (doc_id, sent_index)."""
    labels: dict[tuple[str, int], bool] = {}
    for line_no, obj in _read_lines(path):
        if "doc_id" not in obj:
            continue  # header or other metadata line
        if obj.get("pico") != pico:
            continue
        doc_id = obj.get("doc_id")
        sent_index = obj.get("sent_index")
        label = obj.get("label")
        if (
            not isinstance(doc_id, str)
            or not isinstance(sent_index, int)
            or isinstance(sent_index, bool)
            or not isinstance(label, bool)
        ):
            raise DataError(f"{path}:{line_no}: malformed label record")
        key = (doc_id, sent_index)
        if key in labels:
            raise DataError(f"{path}:{line_no}: duplicate label for {key}")
        labels[key] = label
    return labels


def load_training_set(
    corpus_path: str | Path, labels_path: str | Path, pico: str
) -> tuple[list[list[str]], list[bool]]:
    """Join corpus sentences with their labels, in corpus order.

    Sentences without a label are skipped (the label file may cover a
    subset), but a label that points at no corpus sentence is an error.
    """
    labels = read_labels(labels_path, pico)
    if not labels:
        raise DataError(f"{labels_path} holds no labels for pico {pico!r}")
    sentences: list[list[str]] = []
    targets: list[bool] = []
    unmatched = set(labels)
    for doc_id, sent_index, tokens in iter_corpus_sentences(corpus_path):
        key = (doc_id, sent_index)
        if key in labels:
            sentences.append(tokens)
            targets.append(labels[key])
            unmatched.discard(key)
    if unmatched:
        sample = sorted(unmatched)[:3]
        raise DataError(
            f"{labels_path} labels {len(unmatched)} sentences missing from "
            f"{corpus_path}, e.g. {sample}"
        )
    return sentences, targets


def vocabulary(corpus_path: str | Path) -> list[str]:
    """Sorted lowercased token types of a corpus, for building a base vocab."""
    words = {
        token.lower()
        for _, _, tokens in iter_corpus_sentences(corpus_path)
        for token in tokens
    }
    return sorted(words)
