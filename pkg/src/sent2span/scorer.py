"""Sentence scoring: the model abstraction plus a self-contained baseline.

Every scorer maps a token sequence (optionally with a masked span) to a pair
of class scores, positive and negative, for one label type.  The baseline
here is a two-class linear model over hashed unigram and bigram counts; it
is fast, dependency-light, and deterministic, which makes it the reference
implementation for everything downstream.  Heavier models plug in through
the wire protocol in :mod:`sent2span.protocol`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from hashlib import blake2b
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from sent2span.corpus import PicoType, Span
from sent2span.errors import DivergenceError, TrainingError

__all__ = [
    "MASK_TOKEN",
    "ScoreResult",
    "BaselineScorerModel",
    "TrainConfig",
    "hashed_features",
    "score_sentence",
    "score_masked_batch",
    "predict_sentence_class",
    "train_baseline",
    "cross_entropy_loss",
    "cross_entropy_grad",
]

MASK_TOKEN = "[MASK]"

_NEGATIVE, _POSITIVE = 0, 1


def _sigmoid(x: float) -> float:
    # Stable in both tails.
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class ScoreResult:
    """Class scores for one (sentence, mask) query.

    ``probability`` is the softmax mass of the positive class, i.e.
    ``sigmoid(positive_score - negative_score)``.  ``effective_length`` is
    how many leading tokens the scorer actually consumed; scorers with a
    bounded input window report fewer than were sent.
    """

    positive_score: float
    negative_score: float
    probability: float
    effective_length: int

    @classmethod
    def from_scores(
        cls, positive: float, negative: float, effective_length: int
    ) -> "ScoreResult":
        return cls(
            positive_score=positive,
            negative_score=negative,
            probability=_sigmoid(positive - negative),
            effective_length=effective_length,
        )


def _hash_index(key: str, seed: int, dim: int) -> int:
    digest = blake2b(
        key.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "big")
    ).digest()
    return int.from_bytes(digest, "big") % dim


def hashed_features(
    tokens: Sequence[str], feature_dim: int, hash_seed: int
) -> dict[int, float]:
    """Hashed counts of lowercased unigrams and adjacent bigrams."""
    counts: dict[int, float] = {}
    lowered = [t.lower() for t in tokens]
    for tok in lowered:
        idx = _hash_index("u\x1f" + tok, hash_seed, feature_dim)
        counts[idx] = counts.get(idx, 0.0) + 1.0
    for a, b in zip(lowered, lowered[1:]):
        idx = _hash_index("b\x1f" + a + "\x1f" + b, hash_seed, feature_dim)
        counts[idx] = counts.get(idx, 0.0) + 1.0
    return counts


@dataclass
class BaselineScorerModel:
    """Two-class linear model over hashed n-gram counts.

    ``weights`` has shape ``(2, feature_dim)`` and ``bias`` shape ``(2,)``;
    row 0 is the negative class and row 1 the positive class.
    """

    pico: PicoType
    feature_dim: int
    hash_seed: int
    weights: np.ndarray
    bias: np.ndarray
    mask_token: str = MASK_TOKEN

    @classmethod
    def zeros(
        cls,
        pico: PicoType,
        feature_dim: int = 2**18,
        hash_seed: int = 0,
        mask_token: str = MASK_TOKEN,
    ) -> "BaselineScorerModel":
        return cls(
            pico=pico,
            feature_dim=feature_dim,
            hash_seed=hash_seed,
            weights=np.zeros((2, feature_dim)),
            bias=np.zeros(2),
            mask_token=mask_token,
        )

    def featurize(self, tokens: Sequence[str], mask: Span | None = None) -> dict[int, float]:
        if mask is not None:
            tokens = list(tokens)
            tokens[mask.start : mask.end] = [self.mask_token] * len(mask)
        return hashed_features(tokens, self.feature_dim, self.hash_seed)

    def score(self, tokens: Sequence[str], mask: Span | None = None) -> ScoreResult:
        feats = self.featurize(tokens, mask)
        idx = np.fromiter(feats.keys(), dtype=np.intp, count=len(feats))
        counts = np.fromiter(feats.values(), dtype=np.float64, count=len(feats))
        scores = self.bias + self.weights[:, idx] @ counts
        return ScoreResult.from_scores(
            positive=float(scores[_POSITIVE]),
            negative=float(scores[_NEGATIVE]),
            effective_length=len(tokens),
        )

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write the model as JSON with a sparse weight encoding."""
        nonzero = np.nonzero(self.weights)
        payload = {
            "kind": "baseline",
            "pico": self.pico.value,
            "feature_dim": self.feature_dim,
            "hash_seed": self.hash_seed,
            "mask_token": self.mask_token,
            "bias": [float(v) for v in self.bias],
            "weights": [
                [int(r), int(c), float(self.weights[r, c])]
                for r, c in zip(*nonzero)
            ],
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "BaselineScorerModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        model = cls.zeros(
            pico=PicoType(payload["pico"]),
            feature_dim=payload["feature_dim"],
            hash_seed=payload["hash_seed"],
            mask_token=payload.get("mask_token", MASK_TOKEN),
        )
        model.bias = np.asarray(payload["bias"], dtype=float)
        for r, c, v in payload["weights"]:
            model.weights[r, c] = v
        return model


# ---------------------------------------------------------------------------
# Scoring front door
#
# Downstream code never cares whether scores come from the local baseline or
# from a remote model; anything with ``score`` and ``score_batch`` methods
# over (tokens, mask) works.  The baseline implements ``score`` above and
# gets a trivial batch loop here.
# ---------------------------------------------------------------------------


def score_sentence(
    scorer, tokens: Sequence[str], mask: Span | None = None
) -> ScoreResult:
    """Score one sentence, optionally with ``mask`` blanked out."""
    if mask is not None and mask.end > len(tokens):
        raise ValueError(
            f"mask [{mask.start}, {mask.end}) exceeds sentence length {len(tokens)}"
        )
    return scorer.score(tokens, mask)


def score_masked_batch(
    scorer, tokens: Sequence[str], masks: Sequence[Span | None]
) -> list[ScoreResult]:
    """Score the same sentence under several masks."""
    for mask in masks:
        if mask is not None and mask.end > len(tokens):
            raise ValueError(
                f"mask [{mask.start}, {mask.end}) exceeds sentence length {len(tokens)}"
            )
    batch = getattr(scorer, "score_batch", None)
    if batch is not None:
        return batch(tokens, masks)
    return [scorer.score(tokens, mask) for mask in masks]


def predict_sentence_class(
    scorer, tokens: Sequence[str], threshold: float = 0.5
) -> tuple[bool, float]:
    """Binary sentence decision plus the positive-class probability."""
    result = score_sentence(scorer, tokens)
    return result.probability > threshold, result.probability


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.5
    l2: float = 1e-6
    seed: int = 0
    feature_dim: int = 2**18
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise TrainingError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")
        if self.l2 < 0:
            raise TrainingError("l2 must be >= 0")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")


def _scores_matrix(
    weights: np.ndarray, bias: np.ndarray, feats: Sequence[dict[int, float]]
) -> np.ndarray:
    out = np.tile(bias, (len(feats), 1))
    for row, f in enumerate(feats):
        idx = np.fromiter(f.keys(), dtype=np.intp, count=len(f))
        counts = np.fromiter(f.values(), dtype=np.float64, count=len(f))
        out[row] += weights[:, idx] @ counts
    return out


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy_loss(
    weights: np.ndarray,
    bias: np.ndarray,
    feats: Sequence[dict[int, float]],
    labels: Sequence[int],
    l2: float = 0.0,
) -> float:
    """Mean negative log-likelihood of ``labels`` plus an L2 penalty."""
    log_p = _log_softmax(_scores_matrix(weights, bias, feats))
    nll = -log_p[np.arange(len(labels)), np.asarray(labels)].mean()
    if l2:
        nll += 0.5 * l2 * float((weights**2).sum())
    return float(nll)


def cross_entropy_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    feats: Sequence[dict[int, float]],
    labels: Sequence[int],
    l2: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`cross_entropy_loss` in ``weights`` and ``bias``."""
    scores = _scores_matrix(weights, bias, feats)
    log_p = _log_softmax(scores)
    probs = np.exp(log_p)
    n = len(feats)
    grad_w = np.zeros_like(weights)
    grad_b = np.zeros_like(bias)
    for row, (f, label) in enumerate(zip(feats, labels)):
        residual = probs[row].copy()
        residual[label] -= 1.0
        grad_b += residual / n
        for idx, count in f.items():
            grad_w[:, idx] += residual * (count / n)
    if l2:
        grad_w += l2 * weights
    return grad_w, grad_b


def train_baseline(
    sentences: Sequence[Sequence[str]],
    labels: Sequence[bool],
    pico: PicoType,
    config: TrainConfig = TrainConfig(),
    dev_sentences: Sequence[Sequence[str]] | None = None,
    dev_labels: Sequence[bool] | None = None,
) -> BaselineScorerModel:
    """Fit the baseline with plain mini-batch gradient descent.

    When a dev set is given, the parameters from the epoch with the lowest
    dev loss win; otherwise the final epoch's parameters are returned.  With
    ``epochs=0`` the model comes back untouched (all zeros), which scores
    every sentence at exactly 0.5.
    """
    if len(sentences) != len(labels):
        raise TrainingError("sentences and labels differ in length")
    if not sentences:
        raise TrainingError("no training data")
    y = [int(bool(v)) for v in labels]
    if len(set(y)) < 2:
        raise TrainingError("training data must contain both classes")
    if (dev_sentences is None) != (dev_labels is None):
        raise TrainingError("dev sentences and dev labels must come together")

    model = BaselineScorerModel.zeros(
        pico=pico, feature_dim=config.feature_dim, hash_seed=config.seed
    )
    feats = [model.featurize(s) for s in sentences]
    dev_feats = None
    dev_y: list[int] = []
    if dev_sentences is not None:
        dev_feats = [model.featurize(s) for s in dev_sentences]
        dev_y = [int(bool(v)) for v in dev_labels]  # type: ignore[union-attr]

    rng = np.random.default_rng(config.seed)
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    order = np.arange(len(feats))
    for epoch in range(config.epochs):
        rng.shuffle(order)
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            bf = [feats[i] for i in batch]
            by = [y[i] for i in batch]
            grad_w, grad_b = cross_entropy_grad(
                model.weights, model.bias, bf, by, l2=config.l2
            )
            model.weights -= config.learning_rate * grad_w
            model.bias -= config.learning_rate * grad_b
        train_loss = cross_entropy_loss(model.weights, model.bias, feats, y, config.l2)
        if not math.isfinite(train_loss):
            raise DivergenceError(
                f"training loss became non-finite at epoch {epoch + 1}"
            )
        if dev_feats is not None:
            dev_loss = cross_entropy_loss(
                model.weights, model.bias, dev_feats, dev_y, config.l2
            )
            if not math.isfinite(dev_loss):
                raise DivergenceError(
                    f"dev loss became non-finite at epoch {epoch + 1}"
                )
            if best is None or dev_loss < best[0]:
                best = (dev_loss, model.weights.copy(), model.bias.copy())
    if best is not None:
        model.weights, model.bias = best[1], best[2]
    return model
