"""Exception hierarchy shared across the package.

Two broad families matter to callers: data problems (bad input, schema
mismatch, infeasible calibration target) and numerical problems (fits or
solvers that cannot produce a usable answer). The CLI maps the former to
exit code 2 and the latter to exit code 3.
"""


class CalimpError(Exception):
    """Base class for all package-specific failures."""


class DataError(CalimpError):
    """Input data violates a contract (shape, completeness, coding)."""


class SchemaError(DataError):
    """Input does not match a declared variable schema."""


class ConfigError(DataError):
    """Invalid configuration file or option combination."""


class FeasibilityError(DataError):
    """A calibration target cannot be met by any adjustment."""


class NumericError(CalimpError):
    """A numerical routine failed to converge or produced unusable output."""


class FitError(NumericError):
    """Model fitting failed."""


class SeparationError(FitError):
    """Perfect or quasi-perfect separation detected while fitting."""


class SolverError(NumericError):
    """Root finding failed to locate a solution."""


class SimulationError(NumericError):
    """A simulation run exceeded its tolerated failure rate."""
