"""Exception hierarchy for isskit."""


class IsskitError(Exception):
    """Base class for all isskit errors."""


class NegativeArgument(IsskitError, ValueError):
    pass


class OutOfTableRange(IsskitError, ValueError):
    pass


class NotInvertibleOnRange(OutOfTableRange):
    pass


class EmptyList(IsskitError, ValueError):
    pass


class DegenerateRange(IsskitError, ValueError):
    pass


class DimensionMismatch(IsskitError, ValueError):
    pass


class SmallGainViolated(IsskitError):
    pass


class UnverifiedPath(IsskitError):
    pass


class RegistryUnknown(IsskitError, KeyError):
    pass


class ShapeMismatch(IsskitError, ValueError):
    pass


class LinearSolveFailure(IsskitError, RuntimeError):
    pass


class EigensolverFailure(IsskitError, RuntimeError):
    pass


class NotHurwitz(IsskitError, ValueError):
    pass


class NoPositiveRadius(IsskitError):
    pass


class MethodUnavailable(IsskitError):
    pass


class NoFeasibleEnvelope(IsskitError):
    """Raised when no exponential envelope explains the ensemble.

    The partially filled certificate is attached as ``certificate``.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class TruncationTooSmall(IsskitError, ValueError):
    pass


class UnequalDiffusion(IsskitError, ValueError):
    pass


class ReactionNotOddMonotone(IsskitError, ValueError):
    pass
