"""Exception hierarchy.

Validation problems derive from ``ValidationError`` (CLI exit code 2); numeric
failures derive from ``NumericFailure`` (exit code 3).
"""


class MssgError(Exception):
    pass


class ValidationError(MssgError, ValueError):
    pass


class NumericFailure(MssgError, RuntimeError):
    pass


class NoSolvablePoint(NumericFailure):
    pass


class NotSolvable(ValidationError):
    pass


class BracketFailure(NumericFailure):
    pass


class StepCollapse(NumericFailure):
    pass


class SingularSystem(NumericFailure):
    pass


class DomainGap(ValidationError):
    pass


class SearchInconclusive(NumericFailure):
    pass


class NonConvergence(NumericFailure):
    pass


class ScanFailure(NumericFailure):
    pass


class CostGuard(ValidationError):
    pass


class GridTooCoarse(ValidationError):
    pass


class NumericBlowup(NumericFailure):
    pass
