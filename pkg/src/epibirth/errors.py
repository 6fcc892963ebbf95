"""Exception hierarchy shared by the numerical and inference layers."""


class EpibirthError(Exception):
    """Base class for all package errors."""


class InvalidTime(EpibirthError, ValueError):
    pass


class InvalidParam(EpibirthError, ValueError):
    pass


class NonConvergence(EpibirthError, ArithmeticError):
    """Accelerated inversion failed its stopping rule or left [0, 1]."""


class OverflowDomain(EpibirthError, ArithmeticError):
    """A lattice sweep produced non-finite values."""


class UnboundedLattice(EpibirthError, ValueError):
    """Loop bound and conservation cannot bound some event channel."""


class ImpossibleTransition(EpibirthError):
    """Observed transition is structurally impossible (probability zero)."""

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class NumericalUnderflow(EpibirthError, ArithmeticError):
    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class EmptySupport(EpibirthError):
    """No completion of a partially observed state is feasible."""


class TruncationLeak(EpibirthError, ArithmeticError):
    pass


class DivergentTrajectory(EpibirthError, ArithmeticError):
    pass


class BadInit(EpibirthError, ValueError):
    pass


class UnstableEstimate(EpibirthError, UserWarning):
    """Too few draws near the restriction point for a reliable density estimate."""


class ConfigError(EpibirthError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DataError(EpibirthError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
