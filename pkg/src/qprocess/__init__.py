"""Exact laws and limit checks for the Galton-Watson Q-process."""

from .errors import (
    AssumptionViolated,
    CapTooSmall,
    ConvergenceFailure,
    CriticalLawUnsupported,
    DegenerateSample,
    NonpositiveCRho,
    NotAProbabilityVector,
    QProcessError,
    TruncationOverflow,
)
from .offspring import (
    OffspringLaw,
    SystemParams,
    conjugate_law,
    derive_params,
    extinction_probability,
    new_offspring_law,
    parse_law,
    pgf_eval,
)

__version__ = "0.1.0"
