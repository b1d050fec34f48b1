"""Exception hierarchy.

Two families map onto the CLI exit codes: violated preconditions (exit 2)
and numerical failures (exit 3).
"""


class CoarseSpaceError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(CoarseSpaceError, ValueError):
    """An input violates the documented preconditions of an operation."""


class NumericalError(CoarseSpaceError, ArithmeticError):
    """A computation failed or produced an untrustworthy result."""


class EigensolverError(NumericalError):
    pass


class DegenerateCoarseSpaceError(NumericalError):
    """The coarse matrix P^T A P is singular or numerically singular."""


class SingularPreconditionedSystemError(NumericalError):
    pass


class PoleError(NumericalError):
    """The closed-form perturbed eigenvalue has a vanishing denominator."""


class UnsupportedMetricError(PreconditionError):
    pass


class UnclassifiableCaseError(PreconditionError):
    pass
