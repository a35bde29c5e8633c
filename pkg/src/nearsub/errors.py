"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so every error raised by a
pipeline stage should be (a subclass of) one of the classes below.
"""


class NearsubError(Exception):
    """Base class for all package errors."""

    exit_code = 5
    category = "internal"


class ConfigError(NearsubError):
    """Invalid configuration or invalid operation parameters."""

    exit_code = 2
    category = "config"


class InputDataError(NearsubError):
    """Malformed or inconsistent input data (corpora, embeddings, records)."""

    exit_code = 3
    category = "input-data"


class ExternalServiceError(NearsubError):
    """An external embedding service failed after exhausting retries."""

    exit_code = 4
    category = "external-service"


class InternalError(NearsubError):
    """An internal invariant was violated; indicates a bug."""

    exit_code = 5
    category = "internal"
