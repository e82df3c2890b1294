"""Transformer sentence scorer served over the sent2span-scorer/1 protocol."""

from scorer_service.data import load_training_set, read_labels, vocabulary
from scorer_service.errors import (
    CheckpointError,
    DataError,
    MissingBaseModelError,
    ResourceExhaustedError,
    ServiceError,
)
from scorer_service.model import (
    FineTuneConfig,
    FineTuneResult,
    SentenceClassifier,
    WireScore,
    build_tiny_base,
    fine_tune,
)
from scorer_service.service import PROTOCOL_VERSION, ScorerService, serve

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DataError",
    "FineTuneConfig",
    "FineTuneResult",
    "MissingBaseModelError",
    "PROTOCOL_VERSION",
    "ResourceExhaustedError",
    "ScorerService",
    "SentenceClassifier",
    "ServiceError",
    "WireScore",
    "build_tiny_base",
    "fine_tune",
    "load_training_set",
    "read_labels",
    "serve",
    "vocabulary",
    "__version__",
]
