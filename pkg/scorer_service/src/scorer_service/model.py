"""Fine-tuning and inference for the transformer sentence scorer.

A checkpoint directory is a regular transformers save_pretrained dump plus
one ``scorer_meta.json`` recording which PICO type the model answers for,
the sequence window, and the training history.  The directory layout is
private to this package; everything outside talks to the model through the
wire protocol in :mod:`scorer_service.service`.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
from transformers import (
    AutoModelForSequenceClassification,
    AutoTokenizer,
    BertConfig,
    BertForSequenceClassification,
    BertTokenizerFast,
)
from transformers.utils import logging as hf_logging

from scorer_service.errors import (
    CheckpointError,
    DataError,
    MissingBaseModelError,
    ResourceExhaustedError,
)

__all__ = [
    "FineTuneConfig",
    "FineTuneResult",
    "SentenceClassifier",
    "WireScore",
    "build_tiny_base",
    "fine_tune",
]

# Checkpoint IO progress bars are noise on a server console and in test logs.
hf_logging.disable_progress_bar()

META_FILE = "scorer_meta.json"
POSITIVE_INDEX = 1
_SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
_WARMUP_FRACTION = 0.1
_MAX_GRAD_NORM = 1.0
_PICO_VALUES = ("population", "intervention", "outcome")


@dataclass(frozen=True)
class FineTuneConfig:
    """Settings for one fine-tuning run."""

    base_model: str
    pico: str
    epochs: int = 5
    learning_rate: float = 2e-5
    train_batch_size: int = 32
    eval_batch_size: int = 64
    max_seq_len: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pico not in _PICO_VALUES:
            raise ValueError(f"unknown pico type {self.pico!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.train_batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.max_seq_len < 8:
            raise ValueError("max_seq_len must be >= 8")


@dataclass(frozen=True)
class FineTuneResult:
    checkpoint_dir: str
    best_epoch: int
    history: tuple[dict, ...]

    @property
    def best_dev_f1(self) -> float | None:
        for entry in self.history:
            if entry["epoch"] == self.best_epoch:
                return entry["dev_f1"]
        return None


def build_tiny_base(
    words: Sequence[str],
    out_dir: str | Path,
    hidden_size: int = 64,
    num_layers: int = 1,
    num_heads: int = 2,
    max_positions: int = 512,
    seed: int = 0,
) -> str:
    """Write a small randomly initialized BERT base over the given vocabulary.

    Useful where no pretrained checkpoint is reachable: the result is a
    valid ``base_model`` for :func:`fine_tune`, just an untrained one.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = list(_SPECIAL_TOKENS)
    seen = set(vocab)
    for word in words:
        lowered = word.lower()
        if lowered and lowered not in seen:
            seen.add(lowered)
            vocab.append(lowered)
    vocab_path = out / "vocab.txt"
    vocab_path.write_text("\n".join(vocab) + "\n", encoding="utf-8")
    tokenizer = BertTokenizerFast(vocab=str(vocab_path), do_lower_case=True)
    tokenizer.save_pretrained(str(out))
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=hidden_size,
        num_hidden_layers=num_layers,
        num_attention_heads=num_heads,
        intermediate_size=4 * hidden_size,
        max_position_embeddings=max_positions,
        num_labels=2,
    )
    torch.manual_seed(seed)
    BertForSequenceClassification(config).save_pretrained(str(out))
    return str(out)


def _load_base(base_model: str):
    try:
        tokenizer = AutoTokenizer.from_pretrained(base_model)
        model = AutoModelForSequenceClassification.from_pretrained(
            base_model, num_labels=2
        )
    except OSError as exc:
        raise MissingBaseModelError(
            f"cannot load base model {base_model!r}: {exc}"
        ) from exc
    if not tokenizer.is_fast:
        raise MissingBaseModelError(
            f"base model {base_model!r} has no fast tokenizer; word-level "
            "masking needs word_ids()"
        )
    return tokenizer, model


def _positive_f1(predicted: Sequence[bool], gold: Sequence[bool]) -> float:
    tp = sum(1 for p, g in zip(predicted, gold) if p and g)
    fp = sum(1 for p, g in zip(predicted, gold) if p and not g)
    fn = sum(1 for p, g in zip(predicted, gold) if not p and g)
    denominator = 2 * tp + fp + fn
    return 2 * tp / denominator if denominator else 0.0


def _encode_batch(tokenizer, sentences: Sequence[Sequence[str]], max_seq_len: int):
    return tokenizer(
        [list(s) for s in sentences],
        is_split_into_words=True,
        truncation=True,
        max_length=max_seq_len,
        padding=True,
        return_tensors="pt",
    )


def _predict(model, tokenizer, sentences, config: FineTuneConfig) -> list[bool]:
    model.eval()
    predictions: list[bool] = []
    with torch.no_grad():
        for start in range(0, len(sentences), config.eval_batch_size):
            batch = sentences[start : start + config.eval_batch_size]
            logits = model(**_encode_batch(tokenizer, batch, config.max_seq_len)).logits
            predictions.extend(
                (logits[:, POSITIVE_INDEX] > logits[:, 1 - POSITIVE_INDEX]).tolist()
            )
    return predictions


def fine_tune(
    sentences: Sequence[Sequence[str]],
    labels: Sequence[bool],
    config: FineTuneConfig,
    out_dir: str | Path,
    dev_sentences: Sequence[Sequence[str]] | None = None,
    dev_labels: Sequence[bool] | None = None,
) -> FineTuneResult:
    """Fine-tune the base model on sentence labels and save a checkpoint.

    Runs AdamW with linear warmup over the first tenth of the steps and
    linear decay to zero afterwards, so ``learning_rate`` is the peak.
    With a dev set, the epoch with the best dev F1 is the one saved (ties
    keep the earliest); without one the final epoch wins.  ``epochs=0``
    saves the base model with its head untouched.
    """
    if len(sentences) != len(labels):
        raise DataError("sentences and labels differ in length")
    if not sentences:
        raise DataError("training set is empty")
    if len(set(labels)) < 2:
        raise DataError("training labels are single-class; need both classes")
    if (dev_sentences is None) != (dev_labels is None):
        raise DataError("dev sentences and dev labels must come together")
    if dev_sentences is not None and len(dev_sentences) != len(dev_labels):
        raise DataError("dev sentences and dev labels differ in length")

    tokenizer, model = _load_base(config.base_model)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    targets = [int(bool(v)) for v in labels]

    n = len(sentences)
    steps_per_epoch = (n + config.train_batch_size - 1) // config.train_batch_size
    total_steps = max(1, steps_per_epoch * config.epochs)
    warmup_steps = max(1, int(total_steps * _WARMUP_FRACTION))
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)

    def _lr_scale(step: int) -> float:
        if step < warmup_steps:
            return step / warmup_steps
        return max(0.0, (total_steps - step) / (total_steps - warmup_steps))

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, _lr_scale)

    def snapshot() -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in model.state_dict().items()}

    best_state = snapshot()
    best_epoch = 0
    best_f1: float | None = None
    history: list[dict] = []

    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            model.train()
            epoch_loss = 0.0
            for start in range(0, n, config.train_batch_size):
                index = order[start : start + config.train_batch_size]
                batch = _encode_batch(
                    tokenizer, [sentences[i] for i in index], config.max_seq_len
                )
                loss = model(
                    **batch, labels=torch.tensor([targets[i] for i in index])
                ).loss
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), _MAX_GRAD_NORM)
                optimizer.step()
                scheduler.step()
                optimizer.zero_grad()
                epoch_loss += float(loss.detach()) * len(index)
            entry: dict = {"epoch": epoch, "train_loss": epoch_loss / n, "dev_f1": None}
            if dev_sentences is not None:
                predicted = _predict(model, tokenizer, list(dev_sentences), config)
                entry["dev_f1"] = _positive_f1(predicted, list(dev_labels))
                if best_f1 is None or entry["dev_f1"] > best_f1:
                    best_f1 = entry["dev_f1"]
                    best_epoch = epoch
                    best_state = snapshot()
            else:
                best_epoch = epoch
                best_state = snapshot()
            history.append(entry)
    except torch.cuda.OutOfMemoryError as exc:
        raise ResourceExhaustedError(f"fine-tuning ran out of memory: {exc}") from exc
    except RuntimeError as exc:
        if "out of memory" in str(exc).lower():
            raise ResourceExhaustedError(
                f"fine-tuning ran out of memory: {exc}"
            ) from exc
        raise

    model.load_state_dict(best_state)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(str(out))
    tokenizer.save_pretrained(str(out))
    meta = {
        "pico": config.pico,
        "max_seq_len": config.max_seq_len,
        "positive_index": POSITIVE_INDEX,
        "best_epoch": best_epoch,
        "history": history,
    }
    (out / META_FILE).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return FineTuneResult(str(out), best_epoch, tuple(history))


class WireScore(NamedTuple):
    """Exactly the three numbers a protocol reply carries."""

    pos_score: float
    neg_score: float
    effective_length: int


class SentenceClassifier:
    """A loaded checkpoint answering mask-aware scoring requests.

    Masking replaces each raw token in the interval with the tokenizer's
    mask token before subword tokenization, so span indices stay in raw
    token space.  When a sentence overflows the sequence window, only the
    longest prefix of whole words that fits is scored, and that prefix
    length is reported back as ``effective_length``.
    """

    def __init__(self, tokenizer, model, pico: str, max_seq_len: int):
        self.tokenizer = tokenizer
        self.model = model
        self.pico = pico
        self.max_seq_len = max_seq_len
        # Torch modules are not guaranteed safe under concurrent forward
        # calls from server threads.
        self._lock = threading.Lock()
        self.model.eval()

    @classmethod
    def load(cls, checkpoint_dir: str | Path) -> "SentenceClassifier":
        directory = Path(checkpoint_dir)
        meta_path = directory / META_FILE
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CheckpointError(
                f"{directory} has no {META_FILE}; not a scorer checkpoint"
            ) from None
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{meta_path} is not valid JSON: {exc}") from None
        try:
            tokenizer = AutoTokenizer.from_pretrained(str(directory))
            model = AutoModelForSequenceClassification.from_pretrained(str(directory))
        except OSError as exc:
            raise CheckpointError(f"cannot load checkpoint {directory}: {exc}") from exc
        if not tokenizer.is_fast:
            raise CheckpointError(f"checkpoint {directory} lacks a fast tokenizer")
        pico = meta.get("pico")
        max_seq_len = meta.get("max_seq_len")
        if pico not in _PICO_VALUES or not isinstance(max_seq_len, int):
            raise CheckpointError(f"{meta_path} is missing pico or max_seq_len")
        return cls(tokenizer, model, pico, max_seq_len)

    def _encode_window(self, words: list[str]) -> tuple[list[int], int]:
        encoded = self.tokenizer(words, is_split_into_words=True)
        ids = encoded["input_ids"]
        if len(ids) <= self.max_seq_len:
            return ids, len(words)
        subword_counts = [0] * len(words)
        specials = 0
        for word_id in encoded.word_ids():
            if word_id is None:
                specials += 1
            else:
                subword_counts[word_id] += 1
        budget = self.max_seq_len - specials
        keep = 0
        used = 0
        for count in subword_counts:
            if used + count > budget:
                break
            used += count
            keep += 1
        return (
            self.tokenizer(words[:keep], is_split_into_words=True)["input_ids"],
            keep,
        )

    def score(
        self, tokens: Sequence[str], mask: tuple[int, int] | None = None
    ) -> WireScore:
        words = [str(t) for t in tokens]
        if mask is not None:
            start, end = mask
            if not 0 <= start < end <= len(words):
                raise ValueError(f"mask {mask!r} out of range for {len(words)} tokens")
            words[start:end] = [self.tokenizer.mask_token] * (end - start)
        ids, effective_length = self._encode_window(words)
        input_ids = torch.tensor([ids])
        with self._lock, torch.no_grad():
            try:
                logits = self.model(
                    input_ids=input_ids, attention_mask=torch.ones_like(input_ids)
                ).logits[0]
            except torch.cuda.OutOfMemoryError as exc:
                raise ResourceExhaustedError(f"scoring ran out of memory: {exc}") from exc
        return WireScore(
            float(logits[POSITIVE_INDEX]),
            float(logits[1 - POSITIVE_INDEX]),
            effective_length,
        )
