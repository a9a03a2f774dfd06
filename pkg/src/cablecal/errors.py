"""Exception hierarchy shared by all cablecal modules."""


class CablecalError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class ComputationError(CablecalError):
    """A numerical procedure could not produce a valid result."""


class DegenerateGeometryError(ComputationError):
    pass


class SingularConfigurationError(DegenerateGeometryError):
    pass


class LimitViolationError(CablecalError, ValueError):
    pass


class NoSpheresFoundError(ComputationError):
    pass


class UnknownIdentityError(ComputationError, KeyError):
    pass


class FormatViolationError(CablecalError, ValueError):
    """Model spec combination that the modelling scheme does not allow."""


class HistoryTooLongError(CablecalError, ValueError):
    pass


class NonConvergenceError(ComputationError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DivergenceError(ComputationError):
    pass


class ShapeMismatchError(CablecalError, ValueError):
    pass


class DirectionMismatchError(CablecalError, ValueError):
    pass


class UntrainedModelError(CablecalError):
    pass
