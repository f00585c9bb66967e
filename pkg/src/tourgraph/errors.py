"""Exception hierarchy shared by every module.

CLI exit codes hang off the three families: argument problems (2),
backend problems (3) and data problems (4).
"""

from __future__ import annotations


class TourGraphError(Exception):
    exit_code = 1


class InvalidArgument(TourGraphError, ValueError):
    exit_code = 2


class InvalidState(TourGraphError):
    exit_code = 2


class Conflict(TourGraphError):
    exit_code = 4


class NotFound(TourGraphError, KeyError):
    exit_code = 4

    def __str__(self) -> str:
        # KeyError.__str__ would repr() the message
        return str(self.args[0]) if self.args else ""


class DataError(TourGraphError):
    exit_code = 4


class SchemaInvalid(DataError):
    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class CorruptFile(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class BenchmarkFormatError(DataError):
    pass


class ContextOverflow(TourGraphError):
    exit_code = 4

    def __init__(self, tokens: int, limit: int):
        super().__init__(
            f"serialized graph needs ~{tokens} tokens but the backend limit is {limit}; "
            "use retrieval mode (--mode R) to query a subgraph instead"
        )
        self.tokens = tokens
        self.limit = limit


class BackendError(TourGraphError):
    exit_code = 3
    retryable = False


class BackendUnavailable(BackendError):
    retryable = True


class BackendTimeout(BackendUnavailable):
    pass


class BackendAuthError(BackendError):
    pass


class FixtureMiss(BackendError):
    def __init__(self, key: str, op: str):
        super().__init__(f"mock backend has no fixture for op={op!r} key={key}")
        self.key = key
        self.op = op


class ChunkExtractionError(TourGraphError):
    def __init__(self, chunk_index: int, cause: Exception):
        super().__init__(f"chunk {chunk_index}: {cause}")
        self.chunk_index = chunk_index
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
