"""Exception hierarchy shared by all covsteer modules."""

from __future__ import annotations


class CovSteerError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(CovSteerError, ValueError):
    pass


class NotSymmetric(CovSteerError, ValueError):
    pass


class NotPSD(CovSteerError, ValueError):
    pass


class NotPD(NotPSD):
    pass


class BadLength(CovSteerError, ValueError):
    pass


class ParseError(CovSteerError, ValueError):
    """Malformed problem file; the message carries field and line context."""


class ValidationError(CovSteerError, ValueError):
    def __init__(self, report):
        self.report = report
        super().__init__("invalid problem: " + "; ".join(report.violations))


class SingularTransform(CovSteerError, ArithmeticError):
    pass


class SingularStateCovariance(CovSteerError, ArithmeticError):
    pass


class SingularA(CovSteerError, ArithmeticError):
    pass


class MoCoMismatch(CovSteerError, RuntimeError):
    """Moments re-propagated from an extracted policy disagree with the SDP blocks."""


class SolveError(CovSteerError, RuntimeError):
    """A stage of the steering pipeline failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str, status: str | None = None):
        self.stage = stage
        self.status = status
        super().__init__(f"[{stage}] {message}")
