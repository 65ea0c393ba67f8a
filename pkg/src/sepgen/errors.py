"""Exception hierarchy shared across the package.

Two broad families matter to callers: configuration/data problems
(:class:`ConfigError`, :class:`DataError`) and numerical failures
(:class:`NumericalError` and subclasses). The CLI maps the first family
to exit code 1 and the second to exit code 2. Infeasibility of the
set-cover program is *not* an error; it is reported as a solution status.
"""


class SepgenError(Exception):
    """Base class for all package errors."""


class ConfigError(SepgenError):
    """Invalid configuration: unknown keys, bad values, missing requirements."""


class DataError(SepgenError):
    """Malformed or inconsistent input data."""


class SchemaError(DataError):
    """Input files do not match the declared schema."""


class NumericalError(SepgenError):
    """A numerical procedure failed."""


class DegenerateVariableError(NumericalError):
    """A variable has zero variance where positive variance is required."""


class NonConvergenceError(NumericalError):
    """An iterative fit did not reach its tolerance within its budget."""

    def __init__(self, message, achieved_tolerance=None):
        super().__init__(message)
        self.achieved_tolerance = achieved_tolerance


class SeparationError(NumericalError):
    """Logistic fit diverged, indicating (quasi-)perfect separation."""


class SampleSizeError(DataError):
    """Too few observations for the requested operation."""


class PathExplosionError(NumericalError):
    """Simple-path enumeration exceeded its cap."""

    def __init__(self, cap, found):
        super().__init__(
            f"simple-path enumeration exceeded the cap of {cap} paths "
            f"(found at least {found}); raise path_cap or simplify the graph"
        )
        self.cap = cap
        self.found = found


class DegenerateArmError(NumericalError):
    """A treatment arm received zero total weight or is empty."""


class RankDeficiencyError(NumericalError):
    """Design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class PoolTooSmallError(NumericalError):
    """Sampling pool exhausted before the requested sample size was reached."""


class TotalInfeasibilityError(SepgenError):
    """Every bootstrap replicate produced an infeasible separating-set program."""
