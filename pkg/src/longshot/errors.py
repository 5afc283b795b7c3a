"""Shared exception types; the CLI maps these onto exit codes."""


class LongshotError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LongshotError, ValueError):
    """An input violates a documented invariant; the message names the rule."""


class ParseError(LongshotError, ValueError):
    """A file or service response could not be parsed."""


class ServiceError(LongshotError, RuntimeError):
    """An external service (embedder, judge, command) failed after retries."""


class MissingEmbeddingError(LongshotError, LookupError):
    """An embedding reference could not be resolved by any provider."""


class DegenerateInputError(ValidationError):
    """The requested statistic is undefined for this input (e.g. all-tied vector)."""
