"""Exception hierarchy shared by all modules.

Every numerical failure raised by the library derives from
:class:`QTSError`, which lets the command line front end map it to a
single exit status while still naming the concrete failure.
"""

from __future__ import annotations


class QTSError(Exception):
    """Base class for library errors."""


class RangeError(QTSError, OverflowError):
    """A point value or product left the representable binary64 range."""


class OutOfWindow(QTSError, LookupError):
    """A tabulated function was read outside its exponent window."""


class NonConvergent(QTSError):
    """A limit failed the Cauchy stopping rule within its exponent budget."""


class NotRegressive(QTSError):
    """A one-step factor ``1 + mu*p`` or ``I + mu*A`` is (numerically) singular."""

    def __init__(self, msg: str, exponent: int | None = None):
        super().__init__(msg)
        self.exponent = exponent


class ExtractionFailed(QTSError):
    """No shift subsequence of the minimum length met the tolerance."""


class SingularX(QTSError):
    """A fundamental matrix could not be inverted on its window."""


class NoDecay(QTSError):
    """A fitted dichotomy envelope does not decay."""


class UnitCircleEigenvalue(QTSError):
    """A constant one-step matrix has an eigenvalue too close to the unit circle."""


class TailNotCertified(QTSError):
    """Green-sum tails could not be bounded below tolerance within the budget."""


class MaxIterExceeded(QTSError):
    """Picard iteration did not reach tolerance within ``max_iter`` sweeps."""

    def __init__(self, msg: str, result=None):
        super().__init__(msg)
        self.result = result


class NonContraction(QTSError):
    """Observed Picard ratios exceeded one for three consecutive sweeps."""

    def __init__(self, msg: str, result=None):
        super().__init__(msg)
        self.result = result
