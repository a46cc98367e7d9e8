"""Offspring laws with their generating function and the parameters derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import (
    AssumptionViolated,
    ConvergenceFailure,
    CriticalLawUnsupported,
    NotAProbabilityVector,
)

SUM_TOL = 1e-12
MAX_SUPPORT = 64
ROOT_TOL = 1e-14
ROOT_MAX_ITER = 200


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution ``p_0, ..., p_K``.

    Build instances through :func:`new_offspring_law`, which validates them.
    The class is hashable so samplers and transition tables can be cached
    per law.
    """

    probs: tuple[float, ...]

    @cached_property
    def coeffs(self) -> np.ndarray:
        arr = np.array(self.probs, dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def mean_m(self) -> float:
        return math.fsum(k * p for k, p in enumerate(self.probs))

    @property
    def support_max(self) -> int:
        return len(self.probs) - 1

    def __call__(self, s: float) -> float:
        return pgf_eval(self, s, 0)


@dataclass(frozen=True)
class SystemParams:
    q: float
    beta: float
    gamma_q: float
    b_q: float
    alpha: float
    c_rho: float

    @property
    def classification(self) -> str:
        return "supercritical" if self.q < 1.0 else "subcritical"

    @property
    def drift(self) -> float:
        """Limit of S_n / n."""
        return 1.0 + self.gamma_q


def _strip_trailing_zeros(values: list[float]) -> list[float]:
    while len(values) > 1 and values[-1] == 0.0:
        values.pop()
    return values


def new_offspring_law(
    probs: Iterable[float], *, max_support: int = MAX_SUPPORT, check_assumptions: bool = True
) -> OffspringLaw:
    """Validate a probability vector and wrap it as an :class:`OffspringLaw`.

    Trailing zeros are dropped.  ``check_assumptions=False`` only checks that
    the vector is a probability vector; it exists for internal laws (e.g.
    the size-biased law) that need not satisfy the standing assumptions.
    """
    values = [float(p) for p in probs]
    if not values:
        raise NotAProbabilityVector("empty probability vector")
    if any(not math.isfinite(p) or p < 0.0 or p > 1.0 for p in values):
        raise NotAProbabilityVector(f"entries must lie in [0, 1]: {values}")
    total = math.fsum(values)
    if abs(total - 1.0) > SUM_TOL:
        raise NotAProbabilityVector(f"probabilities sum to {total!r}, not 1")
    values = _strip_trailing_zeros(values)
    if check_assumptions:
        if len(values) - 1 > max_support:
            raise AssumptionViolated(f"support {len(values) - 1} exceeds cap {max_support}")
        if values[0] <= 0.0:
            raise AssumptionViolated("p_0 must be positive")
        p01 = values[0] + (values[1] if len(values) > 1 else 0.0)
        if p01 >= 1.0 - SUM_TOL:
            raise AssumptionViolated(f"p_0 + p_1 = {p01!r} must be < 1")
    return OffspringLaw(tuple(values))


def parse_law(text: str) -> OffspringLaw:
    """Parse the literal ``"p0,p1,...,pK"``; entries may be decimals or ratios like ``1/3``."""
    try:
        parts = [Fraction(tok.strip()) for tok in text.split(",") if tok.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise NotAProbabilityVector(f"cannot parse law {text!r}: {exc}") from None
    if parts and sum(parts) != 1 and abs(float(sum(parts)) - 1.0) > SUM_TOL:
        raise NotAProbabilityVector(f"probabilities sum to {float(sum(parts))!r}, not 1")
    return new_offspring_law(float(p) for p in parts)


def format_law(law: OffspringLaw) -> str:
    return ",".join(repr(p) for p in law.probs)


def pgf_eval(law: OffspringLaw, s: float, order: int = 0) -> float:
    """Evaluate f(s) or its ``order``-th derivative (order 0..3)."""
    if order not in (0, 1, 2, 3):
        raise ValueError(f"order must be 0..3, got {order}")
    c = law.coeffs if order == 0 else P.polyder(law.coeffs, order)
    return float(P.polyval(s, c))


def extinction_probability(law: OffspringLaw) -> float:
    """Smallest root of f(s) = s in [0, 1].

    Subcritical and critical laws return exactly 1.  Otherwise f(s) - s is
    convex, positive at 0 and negative just below 1, so bisection brackets
    the root; a few Newton steps polish it.
    """
    if law.mean_m <= 1.0:
        return 1.0

    def g(s: float) -> float:
        return pgf_eval(law, s) - s

    lo, eps = 0.0, 1e-3
    hi = 1.0 - eps
    while g(hi) >= 0.0:
        eps /= 2.0
        hi = 1.0 - eps
        if eps < 1e-15:
            raise ConvergenceFailure("could not bracket the extinction probability")
    for _ in range(ROOT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < ROOT_TOL:
            break
    q = 0.5 * (lo + hi)
    for _ in range(5):
        d = pgf_eval(law, q, 1) - 1.0
        if d == 0.0:
            break
        step = g(q) / d
        q -= step
        if abs(step) < 1e-17:
            break
    if abs(g(q)) > SUM_TOL:
        raise ConvergenceFailure(f"residual |f(q) - q| = {abs(g(q))!r}")
    return q


def conjugate_law(law: OffspringLaw, q: float | None = None) -> OffspringLaw:
    """The subcritical law f_q(s) = f(qs)/q with probabilities p_k q^(k-1)."""
    if q is None:
        q = extinction_probability(law)
    if q == 1.0:
        return law
    probs = [p * q ** (k - 1) for k, p in enumerate(law.probs)]
    total = math.fsum(probs)
    # f(q) = q holds to ~1e-16; absorb the rounding into p_0 so the result sums to 1.
    probs[0] += 1.0 - total
    return new_offspring_law(probs, check_assumptions=False)


def size_biased_probs(law: OffspringLaw, params: SystemParams) -> np.ndarray:
    """Spine offspring law k p_k q^(k-1) / beta (the coefficients of w(s))."""
    q = params.q
    w = np.array([k * p * q ** (k - 1) if k else 0.0 for k, p in enumerate(law.probs)])
    return w / w.sum()


def derive_params(law: OffspringLaw) -> SystemParams:
    if abs(law.mean_m - 1.0) <= SUM_TOL:
        raise CriticalLawUnsupported("critical law (m = 1): beta = 1, Q-process is transient")
    q = extinction_probability(law)
    beta = pgf_eval(law, q, 1)
    if not 0.0 < beta < 1.0:
        raise CriticalLawUnsupported(f"beta = {beta!r} is not in (0, 1)")
    b_q = q * pgf_eval(law, q, 2)
    gamma_q = b_q / (beta * (1.0 - beta))
    alpha = 1.0 + gamma_q * (1.0 - beta)
    c3 = q * q * pgf_eval(law, q, 3)

    from .moments import c_rho_closed_form

    c_rho = c_rho_closed_form(beta, b_q, c3)
    return SystemParams(q=q, beta=beta, gamma_q=gamma_q, b_q=b_q, alpha=alpha, c_rho=c_rho)


def random_law(rng: np.random.Generator, support: int | None = None) -> OffspringLaw:
    """Draw a random valid, non-critical law (used by property tests and demos)."""
    while True:
        k = support if support is not None else int(rng.integers(2, 7))
        raw = rng.dirichlet(np.ones(k + 1))
        raw[0] = max(raw[0], 1e-3)
        raw = raw / raw.sum()
        raw[-1] = 1.0 - math.fsum(raw[:-1])
        if raw[-1] < 0:
            continue
        try:
            law = new_offspring_law(raw)
        except (AssumptionViolated, NotAProbabilityVector):
            continue
        if abs(law.mean_m - 1.0) > 1e-3:
            return law


def law_from_sequence(probs: Sequence[float] | OffspringLaw | str) -> OffspringLaw:
    if isinstance(probs, OffspringLaw):
        return probs
    if isinstance(probs, str):
        return parse_law(probs)
    return new_offspring_law(probs)
