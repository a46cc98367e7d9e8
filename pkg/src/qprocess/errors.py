"""Exception hierarchy shared by every module of the package."""


class QProcessError(Exception):
    """Base class for all package errors."""


class NotAProbabilityVector(QProcessError, ValueError):
    """Entries are negative, above one, or do not sum to one."""


class AssumptionViolated(QProcessError, ValueError):
    """The law breaks p_0 > 0 or p_0 + p_1 < 1, or exceeds the support cap."""


class CriticalLawUnsupported(QProcessError, ValueError):
    """m == 1: the Q-process is transient and the limit theorems do not apply."""


class ConvergenceFailure(QProcessError, ArithmeticError):
    pass


class TruncationOverflow(QProcessError, ValueError):
    """Requested truncation exceeds the configured cap, or beta**n underflows."""


class CapTooSmall(QProcessError, ValueError):
    """DP caps lose more than the allowed fraction of probability mass."""


class DegenerateSample(QProcessError, ValueError):
    pass


class NonpositiveCRho(QProcessError, ValueError):
    pass
