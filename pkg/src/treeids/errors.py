"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: InputError -> 2, SchemaMismatchError -> 3,
anything else -> 4.
"""


class TreeIdsError(Exception):
    """Base class for all toolkit errors."""


class InputError(TreeIdsError):
    """Unreadable, malformed, or semantically invalid input data."""


class SchemaMismatchError(TreeIdsError):
    """Feature schema of the data does not match what a model expects."""
