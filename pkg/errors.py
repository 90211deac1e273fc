"""
Exception types for the semfuse benchmark.
Bad input derives from ValueError, failed operations from RuntimeError.
"""


class SemFuseError(Exception):
    """Base class for all semfuse errors."""


class InvalidInputError(SemFuseError, ValueError):
    """Input data violates a precondition (non-finite logits, length mismatch, empty dataset)."""


class InvalidParameterError(InvalidInputError):
    """A scalar parameter is out of its allowed range."""


class ConfigError(SemFuseError, ValueError):
    """A run configuration or strategy configuration is invalid."""


class GenerationError(SemFuseError, RuntimeError):
    """Scene generation could not satisfy its constraints."""


class NoPathError(SemFuseError, RuntimeError):
    """No traversable path connects start and goal."""


class TrainingError(SemFuseError, RuntimeError):
    """A classifier could not be trained from the supplied samples."""


class EpisodeNotFoundError(SemFuseError, LookupError):
    """A referenced episode does not exist in the results."""
