"""Exception types shared across the package."""


class DataError(Exception):
    """A dataset or model file is missing, malformed, or inconsistent."""


class InsufficientDataError(ValueError):
    """Fewer samples than a fit requires (e.g. M < k, M < p)."""


class QueryMismatchError(ValueError):
    """A candidate pair's categories do not match the query triplet."""
