"""Shared exception types, mapped to CLI exit codes in cyl.cli."""


class SchemaError(ValueError):
    """Config/input does not match the documented schema (exit 1)."""


class PreconditionError(ValueError):
    """An operation's stated precondition is violated (exit 2)."""


class SolverError(RuntimeError):
    """Iterative solver failed to converge (exit 3)."""


class RankDeficiencyError(ValueError):
    """Fit design matrix is rank deficient (a precondition failure)."""
