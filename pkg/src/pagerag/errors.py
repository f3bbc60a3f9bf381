"""Exception types shared across the package."""


class PageRagError(Exception):
    """Base class for every package-specific error."""


class ParseError(PageRagError):
    """A corpus, question, or cache file could not be parsed."""


class ValidationError(PageRagError):
    """Input data violates a documented invariant."""


class ConfigError(PageRagError):
    """A configuration value is out of range or internally inconsistent."""


class BackendUnavailable(PageRagError):
    """An inference backend could not be reached, even after retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ShapeError(PageRagError):
    """A backend returned the wrong number of items or a bad dimension."""


class ProtocolError(PageRagError):
    """A backend response was reachable but not interpretable."""


class DimensionMismatch(PageRagError):
    """A query vector does not match the index dimension."""


class MissingChunk(PageRagError):
    """A candidate references a chunk_id absent from the chunk store."""


class MissingPrediction(PageRagError):
    """A gold question has no matching prediction."""


class UnknownGoldDoc(PageRagError):
    """A gold document id is absent from the corpus."""


class DomainError(PageRagError):
    """A numeric argument is outside the function's domain."""


class CacheError(PageRagError):
    """Base class for index cache problems."""


class CacheCorrupt(CacheError):
    """An index cache file exists but cannot be read back."""


class CacheVersionMismatch(CacheError):
    """An index cache file was written by an incompatible format version."""
