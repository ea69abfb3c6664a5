"""Exception hierarchy.

Errors split into two families. ``ParameterError`` subclasses signal inputs
that cannot be honoured (bad ranges, grids too small, cutoffs too low); the
CLI maps them to exit code 2. ``NumericalError`` subclasses signal failures
of an otherwise valid computation; the CLI maps them to exit code 3.
"""


class RkkyError(Exception):
    """Base class of all package errors."""


class ParameterError(RkkyError, ValueError):
    """Input outside the validated range of an operation."""


class NumericalError(RkkyError, ArithmeticError):
    """A valid computation failed numerically."""


class DomainError(ParameterError):
    pass


class BoxTooSmall(ParameterError):
    pass


class CutoffTooSmall(ParameterError):
    pass


class InsufficientBasis(ParameterError):
    pass


class InsufficientVirtualStates(ParameterError):
    pass


class ResolutionError(ParameterError):
    pass


class RangeError(ParameterError):
    pass


class SizeError(ParameterError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class DegenerateDenominator(NumericalError):
    pass


class FitFailure(NumericalError):
    pass


class DegeneracyError(NumericalError):
    pass


class OpenShellWarning(UserWarning):
    """Degenerate levels straddle the Fermi level."""


class CouplingRangeWarning(UserWarning):
    """Couplings beyond the truncation range are not small."""
