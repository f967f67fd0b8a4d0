"""Exception hierarchy shared by every gann module."""


class GannError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(GannError, ValueError):
    """A tunable is outside its valid range."""


class DimensionMismatchError(GannError, ValueError):
    """Two vectors (or a vector and an index) disagree on dimensionality."""


class DataFormatError(GannError):
    """A vector file is malformed."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class GraphInvariantError(GannError):
    """A mutation would break a FlatGraph invariant."""


class DegreeCapError(GraphInvariantError):
    """A neighbor list would exceed the maximum out-degree."""


class IndexLoadError(GannError):
    """A GANN index file cannot be read."""


class BadMagicError(IndexLoadError):
    pass


class UnsupportedVersionError(IndexLoadError):
    pass


class UnknownKindError(IndexLoadError):
    pass


class TruncatedIndexError(IndexLoadError):
    pass


class DegenerateQueryError(GannError):
    """A complexity metric is undefined for this query (zero k-th distance)."""
