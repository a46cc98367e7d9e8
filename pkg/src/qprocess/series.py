"""Truncated power series in one (s) and two (s, x) variables.

Coefficients are stored densely and every product is a direct
convolution, so probability series never pick up negative round-off.
The bivariate product runs row by row through BLAS matrix products.
Every series carries the mass it has lost to truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .errors import TruncationOverflow
from .offspring import OffspringLaw, conjugate_law, derive_params

TRUNC_CAP = 4096


def _check_trunc(*ns: int, cap: int = TRUNC_CAP) -> None:
    for n in ns:
        if n < 0:
            raise ValueError(f"truncation must be nonnegative, got {n}")
        if n > cap:
            raise TruncationOverflow(f"truncation {n} exceeds cap {cap}")


@dataclass(frozen=True, eq=False)
class UniSeries:
    """Coefficients c_0..c_N of a series in s."""

    coeffs: np.ndarray

    @property
    def trunc_N(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def identity(cls, N: int) -> UniSeries:
        c = np.zeros(N + 1)
        if N >= 1:
            c[1] = 1.0
        return cls(c)

    @classmethod
    def constant(cls, value: float, N: int) -> UniSeries:
        c = np.zeros(N + 1)
        c[0] = value
        return cls(c)

    @classmethod
    def from_coeffs(cls, coeffs: Iterable[float], N: int) -> UniSeries:
        c = np.zeros(N + 1)
        src = np.asarray(list(coeffs), dtype=float)[: N + 1]
        c[: len(src)] = src
        return cls(c)

    @property
    def mass(self) -> float:
        return math.fsum(self.coeffs)

    @property
    def leakage(self) -> float:
        return 1.0 - self.mass

    def __mul__(self, other: UniSeries) -> UniSeries:
        N = min(self.trunc_N, other.trunc_N)
        return UniSeries(np.convolve(self.coeffs[: N + 1], other.coeffs[: N + 1])[: N + 1])

    def __call__(self, s: float) -> float:
        return float(np.polynomial.polynomial.polyval(s, self.coeffs))

    def to_csv(self, fh: TextIO) -> None:
        for j, c in enumerate(self.coeffs):
            fh.write(f"{j},{float(c)!r}\n")


def _truncated_conv2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct 2-D Cauchy product of equal-shape arrays, kept to that shape.

    Row j' of ``a`` becomes an upper-triangular Toeplitz matrix T, and
    b[: N+1-j'] @ T is added into rows j'.. of the result.  Every term is
    a plain product of coefficients, so nonnegative inputs give a
    nonnegative output with relative rounding error only.
    """
    rows, cols = a.shape
    out = np.zeros((rows, cols))
    idx = np.arange(cols)
    lag = idx[None, :] - idx[:, None]
    below = lag < 0
    lag[below] = 0
    for jp in np.flatnonzero(a.any(axis=1)):
        T = a[jp][lag]
        T[below] = 0.0
        out[jp:] += b[: rows - jp] @ T
    return out


@dataclass(frozen=True, eq=False)
class BiSeries:
    """Coefficients c[j, l] of s^j x^l, truncated at (N, M)."""

    coeffs: np.ndarray

    @property
    def trunc(self) -> tuple[int, int]:
        N, M = self.coeffs.shape
        return N - 1, M - 1

    @classmethod
    def identity_s(cls, N: int, M: int) -> BiSeries:
        c = np.zeros((N + 1, M + 1))
        if N >= 1:
            c[1, 0] = 1.0
        return cls(c)

    @classmethod
    def constant(cls, value: float, N: int, M: int) -> BiSeries:
        c = np.zeros((N + 1, M + 1))
        c[0, 0] = value
        return cls(c)

    @property
    def mass(self) -> float:
        return math.fsum(self.coeffs.ravel())

    @property
    def leakage(self) -> float:
        return 1.0 - self.mass

    def __mul__(self, other: BiSeries) -> BiSeries:
        N = min(self.trunc[0], other.trunc[0])
        M = min(self.trunc[1], other.trunc[1])
        a = self.coeffs[: N + 1, : M + 1]
        b = other.coeffs[: N + 1, : M + 1]
        return BiSeries(_truncated_conv2(a, b))

    def __add__(self, other: BiSeries) -> BiSeries:
        return BiSeries(self.coeffs + other.coeffs)

    def shift_x(self) -> BiSeries:
        """Multiply by x, dropping the coefficient pushed past the truncation."""
        c = np.zeros_like(self.coeffs)
        c[:, 1:] = self.coeffs[:, :-1]
        return BiSeries(c)

    def __call__(self, s: float, x: float) -> float:
        return float(np.polynomial.polynomial.polyval2d(s, x, self.coeffs))

    def to_csv(self, fh: TextIO, *, skip_zeros: bool = True) -> None:
        for j, l in zip(*np.nonzero(self.coeffs)) if skip_zeros else np.ndindex(self.coeffs.shape):
            fh.write(f"{j},{l},{float(self.coeffs[j, l])!r}\n")


def _poly_coeffs(outer: OffspringLaw | np.ndarray) -> np.ndarray:
    return outer.coeffs if isinstance(outer, OffspringLaw) else np.asarray(outer, dtype=float)


def compose_poly(outer: OffspringLaw | np.ndarray, inner, *, cap: int = TRUNC_CAP):
    """Coefficients of outer(inner) by Horner's rule, at the truncation of ``inner``.

    Works for both :class:`UniSeries` and :class:`BiSeries` inners.
    """
    c = _poly_coeffs(outer)
    if isinstance(inner, UniSeries):
        _check_trunc(inner.trunc_N, cap=cap)
        acc = UniSeries.constant(c[-1], inner.trunc_N)
        for coef in c[-2::-1]:
            acc = acc * inner
            acc.coeffs[0] += coef
        return acc
    N, M = inner.trunc
    _check_trunc(N, M, cap=cap)
    acc = BiSeries.constant(c[-1], N, M)
    for coef in c[-2::-1]:
        acc = acc * inner
        acc.coeffs[0, 0] += coef
    return acc


def iterate_pgf(law: OffspringLaw, n: int, N: int) -> UniSeries:
    """Truncated series of the n-fold iterate f_n(s); f_0(s) = s."""
    if n < 0:
        raise ValueError("n must be >= 0")
    _check_trunc(N)
    f = UniSeries.identity(N)
    for _ in range(n):
        f = compose_poly(law, f)
    return f


def power_series(base: UniSeries, i: int) -> UniSeries:
    """base**i by square-and-multiply on truncated series."""
    if i < 1:
        raise ValueError("power must be >= 1")
    _check_trunc(base.trunc_N)
    result: UniSeries | None = None
    sq = base
    while i:
        if i & 1:
            result = sq if result is None else result * sq
        i >>= 1
        if i:
            sq = sq * sq
    assert result is not None
    return result


def h_recursion_step(law_q: OffspringLaw, H: BiSeries) -> BiSeries:
    """One step H -> x * f_q(H) of the total-progeny recursion."""
    return compose_poly(law_q, H).shift_x()


def joint_gf(law: OffspringLaw, n: int, N: int, M: int) -> BiSeries:
    """Joint law of (W(n), S_n) from W(0) = 1 as J_n = (s / beta^n) dH_n/ds.

    Coefficient [j, l] is P{W(n) = j, S_n = l}.  ``beta**n`` is applied
    after differentiation, so n is limited to where it does not underflow.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    _check_trunc(N, M)
    params = derive_params(law)
    if n * -math.log(params.beta) > 600.0:
        raise TruncationOverflow(f"beta**{n} underflows double precision")
    law_q = conjugate_law(law, params.q)
    H = BiSeries.identity_s(N, M)
    for _ in range(n):
        H = h_recursion_step(law_q, H)
    j = np.arange(N + 1, dtype=float)[:, None]
    return BiSeries(j * H.coeffs / params.beta**n)


def marginal_S(J: BiSeries) -> np.ndarray:
    """P{S_n = l} for l = 0..M (sum over the s-index)."""
    return J.coeffs.sum(axis=0)


def marginal_W(J: BiSeries) -> np.ndarray:
    return J.coeffs.sum(axis=1)
