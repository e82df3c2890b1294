"""Exception types shared across modules.

Kept in one place so the command line layer can map them onto exit codes
without importing half the package.
"""

from __future__ import annotations


class Sent2SpanError(Exception):
    """Base class for all errors raised by this package."""


class CorpusError(Sent2SpanError):
    """A corpus file or record failed validation."""


class ConfigurationError(Sent2SpanError):
    """A run was configured inconsistently (bad mode, missing input, ...)."""


class TrainingError(Sent2SpanError):
    """Training could not start or was given unusable data."""


class DivergenceError(TrainingError):
    """The training loss became non-finite."""


class ScorerTransportError(Sent2SpanError):
    """An external scorer was unreachable or the connection broke."""


class ScorerProtocolError(ScorerTransportError):
    """An external scorer sent something that violates the wire protocol."""
