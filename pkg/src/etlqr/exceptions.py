"""Exception hierarchy.

Precondition and configuration problems derive from :class:`ValueError`,
numerical failures from :class:`NumericalError` (an :class:`ArithmeticError`),
so callers can catch either family without importing every class.
"""


class EtlError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(EtlError, ArithmeticError):
    """A numerical procedure failed or its precondition cannot hold."""


class NotSchurStable(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class NotStabilizable(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class NotPsd(NumericalError):
    pass


class SingularSigma(NumericalError):
    pass


class SingularW(NumericalError):
    pass


class DegenerateSpectrum(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class GenerationFailed(NumericalError):
    pass


class ZeroMarginal(NumericalError):
    pass


class NonFiniteState(NumericalError):
    """A rollout left the representable range.

    The states simulated before the blow-up are kept in ``trajectory``.
    """

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


class OutOfDomain(EtlError, ValueError):
    pass


class DimensionCap(EtlError, ValueError):
    pass


class WindowOutOfRange(EtlError, ValueError):
    pass


class InsufficientHistory(EtlError, ValueError):
    pass


class LengthMismatch(EtlError, ValueError):
    pass


class ZeroExpectedCost(EtlError, ValueError):
    pass


class TooFewSamples(EtlError, ValueError):
    pass


class NegativeDelay(EtlError, ValueError):
    pass


class ConfigError(EtlError, ValueError):
    pass


class SelfCheckFailed(EtlError):
    """Two independent computations of the same quantity disagree."""


class OutOfRange(EtlError, IndexError):
    pass
