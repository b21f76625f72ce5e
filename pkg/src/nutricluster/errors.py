"""Exception taxonomy shared across the package.

Every failure surfaced to callers derives from :class:`NutriClusterError`
so the command line layer can map any library failure to exit code 1
with a single machine-parsable line.
"""

from __future__ import annotations


class NutriClusterError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(NutriClusterError):
    """A delimited file has the wrong structure (header, column count)."""


class ParseError(NutriClusterError):
    """A field could not be parsed into the expected type."""


class ValidationError(NutriClusterError):
    """A value violates a documented invariant (negative nutrient, bad matrix)."""


class ConfigurationError(NutriClusterError):
    """A configuration object is internally inconsistent or disallowed."""


class ShapeError(NutriClusterError):
    """Array or sequence lengths do not line up."""


class AlignmentError(NutriClusterError):
    """Two labeled artifacts do not cover the same categories."""


class DegenerateInputError(NutriClusterError):
    """The input is too small or too empty for the operation to mean anything."""


class InsufficientDataError(NutriClusterError):
    """A category has too few samples to estimate the requested statistic."""


class UndefinedMetricError(NutriClusterError):
    """The metric is undefined on this input (e.g. no pairs to average)."""


class ConvergenceError(NutriClusterError):
    """Message passing ran out of iterations before stabilising.

    Carries the exemplar set from the final iteration so callers can
    inspect how close the run got.
    """

    def __init__(self, message: str, exemplars: tuple[int, ...] = ()):
        super().__init__(message)
        self.exemplars = tuple(exemplars)


class ConsistencyError(NutriClusterError):
    """Cross-artifact references do not resolve (hierarchy vs table, etc.)."""


class TrainingError(NutriClusterError):
    """Optimisation diverged. Carries the loss trace up to the failure."""

    def __init__(self, message: str, trace: list[float] | None = None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
