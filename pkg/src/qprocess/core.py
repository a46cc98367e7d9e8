"""The Q-process: exact transition laws, a spine sampler and a dynamic-programming oracle for (W(n), S_n)."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, TextIO

import numpy as np

from .errors import CapTooSmall, CriticalLawUnsupported
from .offspring import OffspringLaw, SystemParams, conjugate_law, size_biased_probs
from .series import UniSeries, iterate_pgf, power_series

CHUNK_SIZE = 10_000
DP_MAX_LEAKAGE = 0.01


@dataclass(frozen=True, eq=False)
class QTransition:
    """Row i of the one-step law: ``probs[j]`` = Q_ij(1) for j = 0..j_cap."""

    from_state: int
    probs: np.ndarray
    leakage: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    total_progeny: int
    seed_info: str = ""

    def to_csv(self, fh: TextIO) -> None:
        fh.write("step,W\n")
        for k, w in enumerate(self.states):
            fh.write(f"{k},{int(w)}\n")


@dataclass(frozen=True, eq=False)
class SampleSet:
    """``paths`` independent draws of (W(n), S_n) with their RNG provenance."""

    n: int
    values: np.ndarray
    states: np.ndarray
    seed: int
    i0: int = 1
    chunk_size: int = CHUNK_SIZE

    @property
    def paths(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class JointTable:
    """P{W(n)=j, S_n=l} on 0..j_max x 0..l_max; mass beyond the caps is in ``leakage``."""

    n: int
    probs: np.ndarray
    leakage: float

    @property
    def caps(self) -> tuple[int, int]:
        j, l = self.probs.shape
        return j - 1, l - 1

    @property
    def total(self) -> float:
        return math.fsum(self.probs.ravel())

    def items(self):
        for j, l in zip(*np.nonzero(self.probs)):
            yield int(j), int(l), float(self.probs[j, l])

    def marginal_S(self) -> np.ndarray:
        return self.probs.sum(axis=0)

    def to_csv(self, fh: TextIO) -> None:
        fh.write("j,l,prob\n")
        for j, l, p in self.items():
            fh.write(f"{j},{l},{p!r}\n")
        fh.write(f"#leakage={self.leakage!r}\n")


def _require_recurrent(params: SystemParams) -> None:
    if not params.beta < 1.0:
        raise CriticalLawUnsupported("the Q-process needs beta < 1")


def spine_gf(law: OffspringLaw, params: SystemParams, j_cap: int) -> UniSeries:
    """w(s) = s f'(qs) / beta, truncated at j_cap."""
    return UniSeries.from_coeffs(size_biased_probs(law, params), j_cap)


def q_transition_probs(params: SystemParams, law: OffspringLaw, i: int, j_cap: int) -> QTransition:
    """Coefficients of [f_q(s)]^(i-1) * w(s) up to s^j_cap."""
    _require_recurrent(params)
    if i < 1:
        raise ValueError("state i must be >= 1")
    row = spine_gf(law, params, j_cap)
    if i > 1:
        law_q = conjugate_law(law, params.q)
        row = row * power_series(UniSeries.from_coeffs(law_q.coeffs, j_cap), i - 1)
    return QTransition(i, row.coeffs, row.leakage)


def transition_matrix(params: SystemParams, law: OffspringLaw, j_cap: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows i = 0..j_cap of Q_ij(1) (row 0 unused) and per-row leakage."""
    _require_recurrent(params)
    law_q = UniSeries.from_coeffs(conjugate_law(law, params.q).coeffs, j_cap)
    Q = np.zeros((j_cap + 1, j_cap + 1))
    leak = np.zeros(j_cap + 1)
    row = spine_gf(law, params, j_cap)
    for i in range(1, j_cap + 1):
        Q[i] = row.coeffs
        leak[i] = row.leakage
        row = row * law_q
    return Q, leak


def q_n_row(params: SystemParams, law: OffspringLaw, i: int, n: int, j_cap: int) -> np.ndarray:
    """Q_ij(n) = j q^(j-i) P_ij(n) / (i beta^n) for j = 0..j_cap.

    P_ij(n) is the coefficient of s^j in [f_n(s)]^i; the prefactor is taken
    in log space so large |j - i| neither overflows nor underflows.
    """
    _require_recurrent(params)
    if n == 0:
        row = np.zeros(j_cap + 1)
        if i <= j_cap:
            row[i] = 1.0
        return row
    Pij = power_series(iterate_pgf(law, n, j_cap), i).coeffs
    j = np.arange(j_cap + 1)
    out = np.zeros(j_cap + 1)
    pos = (Pij > 0.0) & (j > 0)
    logq = math.log(params.q)
    jj = j[pos].astype(float)
    logv = np.log(jj) + (jj - i) * logq + np.log(Pij[pos]) - math.log(i) - n * math.log(params.beta)
    out[pos] = np.exp(logv)
    return out


def q_n_step(params: SystemParams, law: OffspringLaw, i: int, j: int, n: int) -> float:
    """Single n-step transition probability Q_ij(n)."""
    return float(q_n_row(params, law, i, n, max(j, 1))[j])


class SpineSampler:
    """Draws Q-process steps by the spine decomposition.

    The spine individual has k children with probability k p_k q^(k-1)/beta
    (alias table); the other i-1 individuals reproduce by f_q, and their
    total is drawn as a multinomial count over the finite support.
    """

    def __init__(self, law: OffspringLaw, params: SystemParams):
        _require_recurrent(params)
        self.law = law
        self.params = params
        spine = size_biased_probs(law, params)
        self.alias_prob, self.alias_idx = build_alias(spine)
        cq = np.array(conjugate_law(law, params.q).coeffs)
        self.conj_probs = cq / cq.sum()
        self.conj_support = np.arange(len(cq))

    def step(self, rng: np.random.Generator, states: np.ndarray) -> np.ndarray:
        size = len(states)
        k = len(self.alias_prob)
        col = rng.integers(0, k, size=size)
        u = rng.random(size)
        spine = np.where(u < self.alias_prob[col], col, self.alias_idx[col])
        counts = rng.multinomial(states - 1, self.conj_probs)
        return spine + counts @ self.conj_support


def build_alias(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table for a finite distribution."""
    p = np.asarray(probs, dtype=float)
    k = len(p)
    scaled = p * k / p.sum()
    prob = np.zeros(k)
    alias = np.arange(k)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    for i in large + small:
        prob[i] = 1.0
    return prob, alias


@lru_cache(maxsize=32)
def _sampler(law: OffspringLaw, params: SystemParams) -> SpineSampler:
    return SpineSampler(law, params)


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream_id); never depends on worker layout."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream_id,))))


def spine_step(rng: np.random.Generator, params: SystemParams, law: OffspringLaw, i: int) -> int:
    return int(_sampler(law, params).step(rng, np.array([i], dtype=np.int64))[0])


def _run(rng, law, params, i0, checkpoints, paths):
    """Advance ``paths`` chains; return (W, S) arrays at each checkpoint."""
    sampler = _sampler(law, params)
    w = np.full(paths, i0, dtype=np.int64)
    s = np.zeros(paths, dtype=np.int64)
    n_max = max(checkpoints)
    want = set(checkpoints)
    out_w, out_s = {}, {}
    for k in range(n_max + 1):
        if k in want:
            out_w[k] = w.copy()
            out_s[k] = s.copy()
        if k == n_max:
            break
        s += w
        w = sampler.step(rng, w)
    return out_w, out_s


def simulate_trajectory(rng: np.random.Generator, params: SystemParams, law: OffspringLaw,
                        i0: int, n: int, seed_info: str = "") -> Trajectory:
    if i0 < 1 or n < 0:
        raise ValueError("need i0 >= 1 and n >= 0")
    sampler = _sampler(law, params)
    states = np.empty(n + 1, dtype=np.int64)
    states[0] = i0
    w = np.array([i0], dtype=np.int64)
    for k in range(1, n + 1):
        w = sampler.step(rng, w)
        states[k] = w[0]
    return Trajectory(states, int(states[:n].sum()), seed_info)


def _chunk_task(args):
    seed, chunk, law, params, i0, checkpoints, paths = args
    return _run(stream(seed, chunk), law, params, i0, checkpoints, paths)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("QPROC_WORKERS", "1")))
    except ValueError:
        return 1


def simulate_grid(seed: int, params: SystemParams, law: OffspringLaw, i0: int,
                  n_grid: Sequence[int], paths: int, *, workers: int | None = None,
                  chunk_size: int = CHUNK_SIZE) -> dict[int, SampleSet]:
    """Simulate ``paths`` chains and record (W(n), S_n) at every n in ``n_grid``.

    Paths are split into fixed-size chunks; chunk c always uses
    ``stream(seed, c)``, so results are identical for any worker count.
    """
    if paths < 1:
        raise ValueError("paths must be >= 1")
    if i0 < 1 or min(n_grid) < 0:
        raise ValueError("need i0 >= 1 and n >= 0")
    _require_recurrent(params)
    workers = default_workers() if workers is None else workers
    checkpoints = tuple(sorted(set(int(n) for n in n_grid)))
    sizes = [min(chunk_size, paths - start) for start in range(0, paths, chunk_size)]
    tasks = [(seed, c, law, params, i0, checkpoints, size) for c, size in enumerate(sizes)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chunk_task, tasks))
    else:
        results = [_chunk_task(t) for t in tasks]
    return {
        n: SampleSet(
            n=n,
            values=np.concatenate([r[1][n] for r in results]),
            states=np.concatenate([r[0][n] for r in results]),
            seed=seed,
            i0=i0,
            chunk_size=chunk_size,
        )
        for n in checkpoints
    }


def simulate_batch(seed: int, params: SystemParams, law: OffspringLaw, i0: int, n: int,
                   paths: int, *, workers: int | None = None, chunk_size: int = CHUNK_SIZE) -> SampleSet:
    return simulate_grid(seed, params, law, i0, [n], paths, workers=workers, chunk_size=chunk_size)[n]


def dp_joint_distribution(params: SystemParams, law: OffspringLaw, n: int,
                          j_cap: int, l_cap: int, *, max_leakage: float = DP_MAX_LEAKAGE) -> JointTable:
    """Forward DP over (state, progeny so far) from W(0) = 1.

    Mass that would leave the table (state above j_cap, progeny above l_cap,
    or transition mass beyond j_cap) goes to ``leakage``; nothing is
    renormalized.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    Q, row_leak = transition_matrix(params, law, j_cap)
    table = np.zeros((j_cap + 1, l_cap + 1))
    table[1, 0] = 1.0
    leakage = 0.0
    j_hi, l_hi = 1, 0
    for _ in range(n):
        new = np.zeros_like(table)
        nj_hi, nl_hi = 0, 0
        for i in range(1, j_hi + 1):
            mass = table[i, : l_hi + 1]
            if not mass.any():
                continue
            leakage += float(row_leak[i]) * math.fsum(mass)
            keep = l_cap + 1 - i
            if keep <= 0:
                leakage += math.fsum(mass)
                continue
            leakage += math.fsum(mass[keep:])
            mass = mass[:keep]
            row = Q[i]
            nz = np.nonzero(row)[0]
            top = int(nz[-1]) if len(nz) else 0
            new[: top + 1, i : i + len(mass)] += np.outer(row[: top + 1], mass)
            nj_hi = max(nj_hi, top)
            nl_hi = max(nl_hi, i + len(mass) - 1)
        table = new
        j_hi, l_hi = nj_hi, nl_hi
    if leakage > max_leakage:
        raise CapTooSmall(f"leakage {leakage:.3g} exceeds {max_leakage} at caps ({j_cap}, {l_cap})")
    return JointTable(n, table, float(leakage))
