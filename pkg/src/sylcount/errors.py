"""Exception types shared across the package.

DataError covers problems with user-supplied inputs (manifests, audio,
checkpoints); NumericError covers non-finite values surfacing inside
computations. Contract violations in code raise plain ValueError/TypeError.
"""


class DataError(Exception):
    """Invalid or unreadable input data; CLI exit code 2."""


class NumericError(Exception):
    """Non-finite value in a numeric computation; CLI exit code 3."""
