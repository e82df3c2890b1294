"""Error types for the scorer service, collected for CLI exit-code mapping."""

from __future__ import annotations


class ServiceError(Exception):
    """Base class for everything this package raises on purpose."""


class DataError(ServiceError):
    """A corpus or label file is malformed or inconsistent."""


class MissingBaseModelError(ServiceError):
    """The configured base checkpoint could not be loaded."""


class CheckpointError(ServiceError):
    """A fine-tuned checkpoint directory is unusable."""


class ResourceExhaustedError(ServiceError):
    """Training or inference ran out of memory."""
