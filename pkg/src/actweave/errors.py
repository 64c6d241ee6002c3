"""Error taxonomy shared across the pipeline.

Exit-code mapping used by the CLI: SchemaError -> 2, NumericError -> 3,
EmptyResultError -> 4.
"""


class ActweaveError(Exception):
    exit_code = 1


class SchemaError(ActweaveError):
    """Malformed or inconsistent input data / artifacts."""

    exit_code = 2


class NumericError(ActweaveError):
    """Non-finite values where finite numbers are required."""

    exit_code = 3


class EmptyResultError(ActweaveError):
    """A stage produced nothing to work with (e.g. no concepts survived)."""

    exit_code = 4
