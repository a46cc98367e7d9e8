"""Monte-Carlo checks of the normal limit of S_n (with its n^(-1/4) rate bound) and of S_n / n.

Standardization always uses exact moments: E S_n from the closed form and
Var S_n from the derivative recursion.  Nothing here estimates a mean or a
scale from the sample being tested.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .core import SampleSet, simulate_grid
from .errors import DegenerateSample, NonpositiveCRho
from .moments import expected_Sn, moment_sequence
from .offspring import OffspringLaw, derive_params

DEFAULT_RATE_GRID = (50, 100, 200, 400, 800)
DEFAULT_LLN_GRID = (50, 100, 200, 400, 1000)


def ks_distance_normal(samples, mean: float, sd: float) -> float:
    """sup_x |F_hat(x) - Phi((x - mean)/sd)| from the order statistics.

    Ties are handled correctly: for a continuous target the supremum is
    attained at the ends of each run of equal values.
    """
    x = np.sort(np.asarray(getattr(samples, "values", samples), dtype=float))
    n = len(x)
    if n < 2:
        raise DegenerateSample("need at least two samples")
    if not sd > 0.0:
        raise DegenerateSample(f"target sd must be positive, got {sd!r}")
    cdf = ndtr((x - mean) / sd)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def ks_distance_degenerate(samples, a: float) -> float:
    """sup_x |P_hat{eta < x} - I_a(x)| with I_a(x) = 1{x > a}."""
    v = np.asarray(getattr(samples, "values", samples), dtype=float)
    return float(max(np.mean(v < a), np.mean(v > a)))


@dataclass
class CltReport:
    n: int
    paths: int
    mean_used: float
    scale_used: float
    ks_distance: float
    seed: int
    variance_ratio: float
    standardized_mean: float
    standardized_var: float

    def to_dict(self) -> dict:
        return asdict(self)


def _loglog_slope(ns: Sequence[float], ys: Sequence[float]) -> float:
    ns = np.asarray(ns, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = ys > 0
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(ns[keep]), np.log(ys[keep]), 1)[0])


def clt_grid(law: OffspringLaw, n_grid: Sequence[int], paths: int, seed: int,
             *, workers: int | None = None) -> list[CltReport]:
    """One simulation to max(n_grid); a CltReport at every grid point (matched seeds)."""
    params = derive_params(law)
    if not params.c_rho > 0.0:
        raise NonpositiveCRho(f"C_rho = {params.c_rho!r}")
    n_grid = sorted(set(int(n) for n in n_grid))
    _, variances = moment_sequence(params, law, max(n_grid))
    sims = simulate_grid(seed, params, law, 1, n_grid, paths, workers=workers)
    reports = []
    for n in n_grid:
        mean = expected_Sn(params, n)
        var = float(variances[n])
        if not var > 0.0:
            raise DegenerateSample(f"S_{n} is deterministic (Var S_n = 0)")
        sd = math.sqrt(var)
        z = (sims[n].values - mean) / sd
        reports.append(CltReport(
            n=n,
            paths=paths,
            mean_used=mean,
            scale_used=sd,
            ks_distance=ks_distance_normal(z, 0.0, 1.0),
            seed=seed,
            variance_ratio=var / (2.0 * params.c_rho * n),
            standardized_mean=float(z.mean()),
            standardized_var=float(z.var(ddof=1)),
        ))
    return reports


def clt_check(law: OffspringLaw, n: int, paths: int, seed: int, *, workers: int | None = None) -> CltReport:
    return clt_grid(law, [n], paths, seed, workers=workers)[0]


@dataclass
class RateProbe:
    n_grid: list[int]
    ks: list[float]
    slope: float
    bound_constant: float
    bound_fraction: float
    seed: int
    paths: int

    def to_dict(self) -> dict:
        return asdict(self)


def rate_probe_clt(law: OffspringLaw, n_grid: Sequence[int] = DEFAULT_RATE_GRID, paths: int = 100_000,
                   seed: int = 1, *, workers: int | None = None) -> RateProbe:
    """Log-log slope of KS(n) and the fraction of the grid under C n^(-1/4).

    C is the smallest constant making the bound hold at the worst grid
    point, so the fraction is 1 by construction; the slope is the content.
    """
    if len(n_grid) < 4:
        raise ValueError("rate probe needs at least 4 grid points")
    reports = clt_grid(law, n_grid, paths, seed, workers=workers)
    ns = [r.n for r in reports]
    ks = [r.ks_distance for r in reports]
    C = max(k * n**0.25 for k, n in zip(ks, ns))
    frac = float(np.mean([k <= C * n**-0.25 * (1 + 1e-12) for k, n in zip(ks, ns)]))
    return RateProbe(ns, ks, _loglog_slope(ns, ks), C, frac, seed, paths)


@dataclass
class LlnReport:
    n_grid: list[int]
    means: list[float]
    std_errors: list[float]
    exact_means: list[float]
    deviation_probs: list[float]
    ks_degenerate: list[float]
    fitted_rate: float
    ks_degenerate_slope: float
    limit: float
    eps: float
    seed: int
    paths: int

    def to_dict(self) -> dict:
        return asdict(self)


def lln_check(law: OffspringLaw, n_grid: Sequence[int] = DEFAULT_LLN_GRID, paths: int = 10_000,
              eps: float | None = None, seed: int = 1, *, workers: int | None = None) -> LlnReport:
    """Sample means of S_n/n and deviation probabilities P{|S_n/n - (1 + gamma_q)| > eps}.

    ``fitted_rate`` is the log-log slope of the deviation probabilities
    (zero entries dropped).  The KS distance to the point mass at
    1 + gamma_q is reported too; it cannot vanish, because P{S_n/n < a}
    tends to 1/2 at the atom a itself.
    """
    params = derive_params(law)
    limit = params.drift
    eps = 0.1 * limit if eps is None else eps
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    n_grid = sorted(set(int(n) for n in n_grid))
    sims = simulate_grid(seed, params, law, 1, n_grid, paths, workers=workers)
    means, ses, exact, dev, ksd = [], [], [], [], []
    for n in n_grid:
        eta = sims[n].values / n
        means.append(float(eta.mean()))
        ses.append(float(eta.std(ddof=1) / math.sqrt(paths)))
        exact.append(expected_Sn(params, n) / n)
        dev.append(float(np.mean(np.abs(eta - limit) > eps)))
        ksd.append(ks_distance_degenerate(eta, limit))
    return LlnReport(n_grid, means, ses, exact, dev, ksd, _loglog_slope(n_grid, dev),
                     _loglog_slope(n_grid, ksd), limit, eps, seed, paths)


def variance_diagnostic(law: OffspringLaw, n_grid: Sequence[int] = (500, 1000, 2000)) -> dict:
    """Var S_n / (2 C_rho n) on a grid, with successive relative changes.

    The ratio settles at (2 C_rho - (1 + gamma_q)^2) / (2 C_rho), the
    second cumulant of log(u(e^theta)/beta), which is reported as
    ``predicted_limit``.
    """
    params = derive_params(law)
    n_grid = sorted(int(n) for n in n_grid)
    _, var = moment_sequence(params, law, max(n_grid))
    ratios = [float(var[n] / (2.0 * params.c_rho * n)) for n in n_grid]
    changes = [abs(b - a) / abs(a) for a, b in zip(ratios, ratios[1:])]
    return {
        "n_grid": n_grid,
        "ratios": ratios,
        "relative_changes": changes,
        "c_rho": params.c_rho,
        "predicted_limit": 1.0 - params.drift**2 / (2.0 * params.c_rho),
        "agrees_with_one": bool(abs(ratios[-1] - 1.0) < 0.01),
    }


def report_to_json(report) -> str:
    d = report.to_dict() if hasattr(report, "to_dict") else report
    return json.dumps(d, sort_keys=True, indent=2) + "\n"


def report_to_csv(rows: list[dict]) -> str:
    """Flat CSV, one row per grid point."""
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()
