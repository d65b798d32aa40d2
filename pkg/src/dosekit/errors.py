"""Exception and warning classes.

Two broad families matter to callers (and to the CLI exit codes):
``ValidationError`` for bad inputs and ``NumericalError`` for failures of
an algorithm on otherwise valid inputs.
"""

from __future__ import annotations


class DoseKitError(Exception):
    """Base class for all dosekit errors."""


class ValidationError(DoseKitError, ValueError):
    """Invalid inputs: bad parameters, inconsistent dimensions, bad files."""


class InvalidParameterError(ValidationError):
    pass


class DegenerateShapeError(ValidationError):
    """A standardized shape is constant over the design, so no contrast exists."""


class NoSolutionError(ValidationError):
    """An anchor or target cannot be reached within the dose range."""


class NumericalError(DoseKitError, ArithmeticError):
    """A numerical procedure failed on valid inputs."""


class SingularCovarianceError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class MonotoneLikelihoodError(NumericalError):
    """Partial likelihood has no finite maximum (a group without events)."""


class AccuracyWarning(UserWarning):
    """QMC integration did not reach the requested absolute error."""


class BoundaryWarning(UserWarning):
    """A fitted nonlinear parameter sits on its bound; Wald inference unreliable."""
