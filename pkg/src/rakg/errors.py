"""Exception types shared across the package."""

from __future__ import annotations


class RakgError(Exception):
    """Base class for every error raised by this package."""


class InvariantViolation(RakgError):
    """A graph, entity, or triple breaks one of its structural invariants."""


class EntityNotFoundError(RakgError):
    """An entity id was referenced that the graph does not contain."""


class GraphParseError(RakgError):
    """Serialized graph input could not be parsed.

    Carries the path of the offending element (e.g. ``triples[3].tail.kind``).
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class EmptyDocumentError(RakgError):
    """The input document is empty or whitespace-only."""


class ConfigError(RakgError):
    """Invalid configuration value or inconsistent provider setup."""


class DimensionMismatchError(RakgError):
    """A vector's dimension does not match the index or provider session."""


class MissingEmbeddingError(RakgError):
    """An operation needed an embedding that was never attached."""


class FixtureMissError(RakgError):
    """The mock provider has no fixture for a request key."""

    def __init__(self, task_kind: str, key: str, payload_preview: str):
        self.task_kind = task_kind
        self.key = key
        super().__init__(
            f"no fixture for task_kind={task_kind!r} key={key} payload={payload_preview}"
        )


class ProviderParseError(RakgError):
    """Model output could not be parsed into the task's result schema."""

    def __init__(self, message: str, raw_text: str = ""):
        self.raw_text = raw_text
        super().__init__(message)


class TransportError(RakgError):
    """A provider backend call failed after bounded retries."""

    def __init__(self, message: str, retryable: bool = True):
        self.retryable = retryable
        super().__init__(message)


class UndefinedMetricError(RakgError):
    """A metric is undefined for the given inputs (e.g. empty graph)."""
