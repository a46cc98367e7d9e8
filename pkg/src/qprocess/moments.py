"""Exact moments of S_n and the total-progeny generating function h(x).

h(x) = E x^V is the minimal root of h = x f_q(h), where V is the total
progeny of the conjugate (subcritical) system.  From it come

    u(x) = x f_q'(h(x))            (u(1) = beta)
    v(x) = x f_q''(h(x)) / (2 u(x))

and the finite-horizon values h_n(x) = E x^(V_n) with h_0 = 1 and
h_{n+1} = x f_q(h_n).  The local expansions of these functions near x = 1
are checked numerically by Richardson extrapolation in :func:`verify_lemma`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceFailure, NonpositiveCRho
from .offspring import OffspringLaw, SystemParams, conjugate_law, derive_params, pgf_eval

H_TOL = 1e-14
H_MAX_ITER = 100_000
NEWTON_SWITCH = 1e-4


@dataclass(frozen=True)
class MomentReport:
    n: int
    mean: float
    second: float
    variance: float
    beta_pow: float


def expected_Sn(params: SystemParams, n: int) -> float:
    """E S_n = (1 + gamma_q) n - gamma_q (1 - beta^n) / (1 - beta)."""
    b, g = params.beta, params.gamma_q
    return (1.0 + g) * n - g * (1.0 - b**n) / (1.0 - b)


def _moment_arrays(params: SystemParams, law_q: OffspringLaw, n_max: int):
    """Mean and second moment of S_n for n = 0..n_max.

    Propagates the derivatives of H_n at (1, 1) through H_{n+1} = x f_q(H_n):
    H_x and H_xx, plus the mixed H_sx and H_sxx divided by H_s = beta^n, which
    keeps everything O(n^2) instead of underflowing.  E S_n = H_sx/beta^n
    and E S_n(S_n - 1) = H_sxx/beta^n.
    """
    beta = params.beta
    b = pgf_eval(law_q, 1.0, 2)
    c = pgf_eval(law_q, 1.0, 3)
    hx = hxx = a = bb = 0.0
    means = np.zeros(n_max + 1)
    fact2 = np.zeros(n_max + 1)
    for n in range(n_max):
        a_next = 1.0 + (b / beta) * hx + a
        bb_next = (2.0 * b / beta) * hx + 2.0 * a + (c / beta) * hx * hx + (b / beta) * hxx \
            + (2.0 * b / beta) * hx * a + bb
        hxx = 2.0 * beta * hx + b * hx * hx + beta * hxx
        hx = 1.0 + beta * hx
        a, bb = a_next, bb_next
        means[n + 1] = a
        fact2[n + 1] = bb
    return means, fact2 + means


def moment_recursion(params: SystemParams, law: OffspringLaw, n: int) -> MomentReport:
    law_q = conjugate_law(law, params.q)
    means, second = _moment_arrays(params, law_q, n)
    mean, sec = float(means[n]), float(second[n])
    return MomentReport(n=n, mean=mean, second=sec, variance=max(sec - mean * mean, 0.0),
                        beta_pow=params.beta**n)


def moment_sequence(params: SystemParams, law: OffspringLaw, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """(mean, variance) of S_n for every n = 0..n_max in one pass."""
    means, second = _moment_arrays(params, conjugate_law(law, params.q), n_max)
    return means, np.maximum(second - means**2, 0.0)


def h_of_x(law_q: OffspringLaw, x: float) -> float:
    """E x^V by monotone iteration from 0, finished with Newton steps.

    Also valid for x slightly above 1, as long as the fixed point exists
    (the iteration diverges otherwise and ConvergenceFailure is raised).
    """
    if x <= 0.0:
        raise ValueError("x must be positive")
    if x == 1.0:
        return 1.0
    h = 0.0
    for _ in range(H_MAX_ITER):
        nxt = x * pgf_eval(law_q, h)
        if not math.isfinite(nxt) or nxt > 1e6:
            raise ConvergenceFailure(f"no fixed point of h = x f_q(h) at x = {x!r}")
        done = abs(nxt - h) < NEWTON_SWITCH
        h = nxt
        if done:
            break
    else:
        raise ConvergenceFailure(f"fixed-point iteration did not settle at x = {x!r}")
    for _ in range(50):
        phi = x * pgf_eval(law_q, h) - h
        dphi = x * pgf_eval(law_q, h, 1) - 1.0
        step = phi / dphi
        h -= step
        if abs(step) < 1e-17:
            break
    if abs(x * pgf_eval(law_q, h) - h) > H_TOL:
        raise ConvergenceFailure(f"residual too large at x = {x!r}")
    return h


def h_n_of_x(law_q: OffspringLaw, n: int, x: float) -> float:
    """E x^(V_n): h_0 = 1 (V_0 = 0), h_{k+1} = x f_q(h_k)."""
    h = 1.0
    for _ in range(n):
        h = x * pgf_eval(law_q, h)
    return h


def h_n_sequence(law_q: OffspringLaw, n: int, x: float) -> np.ndarray:
    out = np.empty(n + 1)
    out[0] = 1.0
    for k in range(n):
        out[k + 1] = x * pgf_eval(law_q, out[k])
    return out


def delta_n(law_q: OffspringLaw, n: int, x: float) -> float:
    """Delta_n(x) = h(x) - h_n(x).  Negative for x < 1 (V_n <= V)."""
    return h_of_x(law_q, x) - h_n_of_x(law_q, n, x)


def u_of_x(law_q: OffspringLaw, x: float) -> float:
    return x * pgf_eval(law_q, h_of_x(law_q, x), 1)


def v_of_x(law_q: OffspringLaw, x: float) -> float:
    h = h_of_x(law_q, x)
    u = x * pgf_eval(law_q, h, 1)
    if u == 0.0:
        raise ZeroDivisionError("u(x) = 0")
    return x * pgf_eval(law_q, h, 2) / (2.0 * u)


def boundary_derivatives(beta: float, b_q: float, c3: float) -> dict[str, float]:
    """h'(1), h''(1), u'(1), u''(1) from f_q'(1) = beta, f_q''(1) = b_q, f_q'''(1) = c3."""
    h1 = 1.0 / (1.0 - beta)
    h2 = (2.0 * beta * (1.0 - beta) + b_q) / (1.0 - beta) ** 3
    u1 = beta + b_q * h1
    u2 = 2.0 * b_q * h1 + c3 * h1 * h1 + b_q * h2
    return {"h1": h1, "h2": h2, "u1": u1, "u2": u2}


def c_rho_closed_form(beta: float, b_q: float, c3: float) -> float:
    """Half the second theta-derivative of u(e^theta)/beta at 0: (u'(1) + u''(1)) / (2 beta)."""
    d = boundary_derivatives(beta, b_q, c3)
    value = (d["u1"] + d["u2"]) / (2.0 * beta)
    if not value > 0.0:
        raise NonpositiveCRho(f"C_rho = {value!r}")
    return value


def c_rho(params: SystemParams, law_q: OffspringLaw) -> float:
    return c_rho_closed_form(params.beta, pgf_eval(law_q, 1.0, 2), pgf_eval(law_q, 1.0, 3))


def c_rho_finite_difference(params: SystemParams, law_q: OffspringLaw,
                            thetas: Sequence[float] = (1e-3, 1e-4)) -> float:
    """Centered second differences of u(e^theta)/beta, Richardson-combined over two steps."""

    def g(t: float) -> float:
        return u_of_x(law_q, math.exp(t)) / params.beta

    g0 = g(0.0)
    est = [(g(t) - 2.0 * g0 + g(-t)) / (t * t) / 2.0 for t in thetas]
    if len(est) == 1:
        return est[0]
    r2 = (thetas[0] / thetas[1]) ** 2
    return (r2 * est[1] - est[0]) / (r2 - 1.0)


# ---------------------------------------------------------------- expansions


def richardson(values: Sequence[float], ratio: float = 2.0, levels: int | None = None) -> float:
    """Extrapolate a(t_k) = a0 + a1 t_k + a2 t_k^2 + ... to t = 0 with t_{k+1} = t_k / ratio."""
    T = list(map(float, values))
    levels = len(T) - 1 if levels is None else min(levels, len(T) - 1)
    for m in range(1, levels + 1):
        f = ratio**m
        T = [(f * T[k + 1] - T[k]) / (f - 1.0) for k in range(len(T) - 1)]
    return T[-1]


def fit_coefficients(g, grid: Sequence[float], n_coeffs: int, levels: int = 4) -> list[float]:
    """Peel off c_1..c_n of g(t) = c_1 t + c_2 t^2 + ... one at a time.

    ``grid`` must decrease geometrically by a factor of 2.
    """
    ts = np.asarray(grid, dtype=float)
    gs = np.array([g(t) for t in ts])
    coeffs: list[float] = []
    for k in range(1, n_coeffs + 1):
        known = sum(c * ts ** (i + 1) for i, c in enumerate(coeffs))
        coeffs.append(richardson((gs - known) / ts**k, levels=levels))
    return coeffs


LEMMAS = ("L1", "L2", "L3", "L4", "L5", "L6")
DEFAULT_GRID = tuple(2.0**-k for k in range(6, 15))


@dataclass
class ExpansionReport:
    lemma_id: str
    grid: list[float]
    fitted_coeffs: list[float]
    target_coeffs: list[float]
    residuals: list[float]
    tolerances: list[float] = field(default_factory=list)
    description: str = ""

    @property
    def passed(self) -> list[bool]:
        return [abs(r) <= tol for r, tol in zip(self.residuals, self.tolerances)]

    def to_dict(self) -> dict:
        return {
            "lemma": self.lemma_id,
            "description": self.description,
            "grid": self.grid,
            "fitted": self.fitted_coeffs,
            "target": self.target_coeffs,
            "residuals": self.residuals,
            "tolerances": self.tolerances,
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b else abs(a - b)


def verify_lemma(law: OffspringLaw, lemma_id: str, grid: Sequence[float] | None = None,
                 *, n: int | None = None) -> ExpansionReport:
    """Fit the local expansion named by ``lemma_id`` and compare with its closed form.

    Residuals are relative errors.  For L1/L2 the grid is t = 1 - x; for
    L3-L5 it is theta with x = e^theta; L6 is evaluated at the single
    point ``grid[0]`` (default theta = 1e-3, n = 20).
    """
    if lemma_id not in LEMMAS:
        raise ValueError(f"unknown lemma {lemma_id!r}")
    params = derive_params(law)
    law_q = conjugate_law(law, params.q)
    beta, gamma, b_q = params.beta, params.gamma_q, params.b_q
    c3 = pgf_eval(law_q, 1.0, 3)
    bd = boundary_derivatives(beta, b_q, c3)
    explicit = grid is not None
    grid = list(grid) if explicit else list(DEFAULT_GRID)

    if lemma_id == "L1":
        fitted = fit_coefficients(lambda t: 1.0 - h_of_x(law_q, 1.0 - t), grid, 2)
        fitted = [fitted[0], -fitted[1]]
        target = [1.0 / (1.0 - beta), (2.0 * beta * (1.0 - beta) + b_q) / (2.0 * (1.0 - beta) ** 3)]
        tols = [1e-6, 1e-3]
        desc = "1 - h(x) = c1 (1-x) - c2 (1-x)^2"
    elif lemma_id == "L2":
        fitted = fit_coefficients(
            lambda t: u_of_x(law_q, 1.0 - t) - beta * (1.0 - t) * (1.0 - gamma * t), grid, 2)
        target = [0.0, (bd["u2"] - 2.0 * beta * gamma) / 2.0]
        tols = [1e-6, 1e-3]
        desc = "rho(x) = u(x) - beta x [1 - gamma_q (1-x)]: c1 -> 0, rho/(1-x)^2 -> const"
    elif lemma_id == "L3":
        fitted = fit_coefficients(lambda t: h_of_x(law_q, math.exp(t)) - 1.0, grid, 2)
        target = [1.0 / (1.0 - beta), (2.0 + beta * gamma) / (2.0 * (1.0 - beta) ** 2)]
        tols = [1e-3, 1e-3]
        desc = "h(e^theta) - 1 = c1 theta + c2 theta^2"
    elif lemma_id == "L4":
        fitted = fit_coefficients(lambda t: u_of_x(law_q, math.exp(t)) / beta - 1.0, grid, 2)
        target = [1.0 + gamma, params.c_rho]
        tols = [1e-6, 1e-3]
        desc = "u(e^theta)/beta - 1 = (1 + gamma_q) theta + C_rho theta^2"
    elif lemma_id == "L5":
        steps = 5 if n is None else n
        fitted = fit_coefficients(
            lambda t: delta_n(law_q, steps, math.exp(t)) / u_of_x(law_q, math.exp(t)) ** steps, grid, 1)
        target = [1.0 / (1.0 - beta)]
        tols = [1e-3]
        desc = f"Delta_n(e^theta)/u^n(e^theta) = c1 theta + O(theta^2), n = {steps}"
    else:
        steps = 20 if n is None else n
        theta = grid[0] if explicit else 1e-3
        grid = [theta]
        x = math.exp(theta)
        hk = h_n_sequence(law_q, steps - 1, x)
        lhs = math.fsum(math.log(x * pgf_eval(law_q, h, 1) / beta) for h in hk)
        u = u_of_x(law_q, x)
        rhs = -(1.0 - u / beta) * steps - gamma * theta * math.fsum(u**k for k in range(steps))
        fitted, target, tols = [lhs], [rhs], [1e-2]
        desc = f"ln prod u_k(e^theta) vs -(1 - u/beta) n - gamma_q theta sum u^k, n = {steps}"

    residuals = [_rel(f, t) if t else abs(f - t) for f, t in zip(fitted, target)]
    return ExpansionReport(lemma_id, grid, fitted, target, residuals, tols, desc)


@dataclass
class RepresentationReport:
    """Checks of |R_n| <= beta^(n-k)|R_k| and of the reciprocal representation for R_n = h - H_n."""

    n: int
    points: list[tuple[float, float]]
    bound_holds: bool
    min_abs_R: float
    resolved: list[int]
    residuals: list[list[float]]
    cauchy: bool

    def to_dict(self) -> dict:
        return asdict(self)


def H_n_point(law_q: OffspringLaw, n: int, s: float, x: float) -> np.ndarray:
    """H_0..H_n at a point: H_0 = s, H_{k+1} = x f_q(H_k)."""
    out = np.empty(n + 1)
    out[0] = s
    for k in range(n):
        out[k + 1] = x * pgf_eval(law_q, out[k])
    return out


DEFAULT_REPRESENTATION_GRID = tuple((s, x) for s in (0.0, 0.3, 0.6) for x in (0.8, 0.9, 0.95))
RESOLVED_R = 1e-12


def check_representation(law: OffspringLaw, n: int = 40,
                              grid: Sequence[tuple[float, float]] | None = None,
                              *, cauchy_from: int = 10) -> RepresentationReport:
    """Evaluate R_k(s;x) = h(x) - H_k(s;x) along k = 0..n on a grid of points.

    (a) |R_m| <= beta^(m-k) |R_k| for k in {0, m/2} and every m <= n, with a
    rounding allowance.  (b) The residual
    u^k/R_k - 1/R_0 - v (1 - u^k)/(1 - u) is the accumulated error sum and
    must settle: beyond ``cauchy_from`` its increments may not grow by more
    than their rounding floor.  (b) only uses k with |R_k| > 1e-12, since
    h - H_k is pure cancellation noise below that.
    """
    params = derive_params(law)
    law_q = conjugate_law(law, params.q)
    beta = params.beta
    grid = DEFAULT_REPRESENTATION_GRID if grid is None else grid
    eps = np.finfo(float).eps
    bound_ok, cauchy_ok = True, True
    min_abs = math.inf
    all_res, resolved = [], []
    for s, x in grid:
        h = h_of_x(law_q, x)
        R = h - H_n_point(law_q, n, s, x)
        for m in range(1, n + 1):
            for k in (0, m // 2):
                if abs(R[m]) > beta ** (m - k) * abs(R[k]) + 8 * eps:
                    bound_ok = False
        big = np.abs(R) > RESOLVED_R
        kmax = int(np.argmin(big)) - 1 if not big.all() else n
        resolved.append(kmax)
        Rr = R[: kmax + 1]
        min_abs = min(min_abs, float(np.min(np.abs(Rr))))
        u = x * pgf_eval(law_q, h, 1)
        v = x * pgf_eval(law_q, h, 2) / (2.0 * u)
        uk = u ** np.arange(kmax + 1)
        res = uk / Rr - 1.0 / Rr[0] - v * (1.0 - uk) / (1.0 - u)
        all_res.append(res.tolist())
        noise = 16 * eps * np.abs(uk / Rr) / np.abs(Rr)
        inc = np.abs(np.diff(res))
        for m in range(cauchy_from, kmax - 1):
            if inc[m + 1] > inc[m] + noise[m + 1] + noise[m + 2]:
                cauchy_ok = False
    return RepresentationReport(n, [tuple(p) for p in grid], bound_ok, min_abs, resolved, all_res, cauchy_ok)


def decay_slope(law: OffspringLaw, x: float = 0.9, n_range: tuple[int, int] = (10, 40)) -> float:
    """Least-squares slope of ln|Delta_n(x)| over n in ``n_range`` (inclusive).

    Points where |Delta_n| is within 64 ulps of h are rounding noise and
    are left out of the fit; at least three resolved points are required.
    """
    params = derive_params(law)
    law_q = conjugate_law(law, params.q)
    h = h_of_x(law_q, x)
    seq = h_n_sequence(law_q, n_range[1], x)
    ns = np.arange(n_range[0], n_range[1] + 1)
    d = np.abs(h - seq[ns])
    keep = d > 64 * np.spacing(h)
    if keep.sum() < 3:
        raise ConvergenceFailure(f"Delta_n({x}) is unresolved over n in {n_range}")
    return float(np.polyfit(ns[keep], np.log(d[keep]), 1)[0])
