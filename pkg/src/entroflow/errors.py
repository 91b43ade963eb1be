"""Exception hierarchy shared by the solvers and the CLI.

The CLI maps each family onto an exit code: configuration problems exit
with 1, solver/runtime failures with 2 and invariant violations with 3.
"""


class EntroflowError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 2


class ConfigError(EntroflowError, ValueError):
    """Invalid, incomplete or inconsistent scenario configuration."""

    exit_code = 1


class SolverError(EntroflowError, RuntimeError):
    """A numerical procedure failed to produce a result (non-convergence, NaN)."""

    exit_code = 2


class InvariantViolation(EntroflowError, RuntimeError):
    """A discrete invariant (positivity, support, bounds) was broken."""

    exit_code = 3


class NegativeDensityError(InvariantViolation):
    pass


class SupportAtBoundaryError(InvariantViolation):
    """Density reached the outermost cells, so the truncated grid no longer mimics the real line."""
