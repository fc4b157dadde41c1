"""Two-way matching queue with abandonments on both sides.

The state is the signed difference ``q = Q_1 - Q_2``; non-idling matching
keeps at least one side empty, so ``Q_1 = q^+`` and ``Q_2 = q^-``.  Within a
slot the order is abandonments, arrivals, matchings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.stats import binom

from .rng import ArrivalSpec, RandomStreams, abandon, arrival, convolve_pmfs
from .stats import (
    ConvergenceError,
    Method,
    PreconditionError,
    Recurrence,
    ThroughputEstimate,
    TruncationError,
    batch_means,
    fan_out,
    mean_and_stderr,
)
from .trajectory import Trajectory

TRACE_FIELDS = ("q", "A1", "A2", "D1", "D2", "M")


def _as_components(arr) -> tuple[ArrivalSpec, ...]:
    if isinstance(arr, ArrivalSpec):
        return (arr,)
    return tuple(arr)


@dataclass(frozen=True)
class TwoWayParams:
    """Arrivals and abandonment probabilities of both sides.

    A side may be fed by several independent arrival streams (``arr1`` given
    as a tuple); ``keys1``/``keys2`` name the arrival substream of each one.
    """

    arr1: ArrivalSpec | tuple[ArrivalSpec, ...]
    arr2: ArrivalSpec | tuple[ArrivalSpec, ...]
    gamma1: float
    gamma2: float
    keys1: tuple[int, ...] | None = None
    keys2: tuple[int, ...] | None = None

    def __post_init__(self):
        c1, c2 = _as_components(self.arr1), _as_components(self.arr2)
        object.__setattr__(self, "arr1", c1 if len(c1) > 1 else c1[0])
        object.__setattr__(self, "arr2", c2 if len(c2) > 1 else c2[0])
        k1 = tuple(self.keys1) if self.keys1 is not None else (1,)
        k2 = tuple(self.keys2) if self.keys2 is not None else (2,)
        if len(k1) != len(c1) or len(k2) != len(c2):
            raise ValueError("one arrival key per component is required")
        object.__setattr__(self, "keys1", k1)
        object.__setattr__(self, "keys2", k2)
        for g in (self.gamma1, self.gamma2):
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"abandonment probability must lie in [0, 1], got {g}")

    @property
    def components1(self):
        return _as_components(self.arr1)

    @property
    def components2(self):
        return _as_components(self.arr2)

    @property
    def mu1(self) -> float:
        return sum(a.mean for a in self.components1)

    @property
    def mu2(self) -> float:
        return sum(a.mean for a in self.components2)

    def pmf1(self, tail=1e-14):
        return convolve_pmfs(*(a.pmf(tail) for a in self.components1))

    def pmf2(self, tail=1e-14):
        return convolve_pmfs(*(a.pmf(tail) for a in self.components2))

    def kernel_args(self):
        c1, c2 = self.components1, self.components2
        return (
            np.array([a.code for a in c1], dtype=np.int64),
            np.array([a.mean for a in c1], dtype=np.float64),
            np.array(self.keys1, dtype=np.int64),
            np.array([a.code for a in c2], dtype=np.int64),
            np.array([a.mean for a in c2], dtype=np.float64),
            np.array(self.keys2, dtype=np.int64),
            float(self.gamma1),
            float(self.gamma2),
        )


@dataclass(frozen=True)
class TwoWayState:
    q: int = 0

    @property
    def q1(self) -> int:
        return max(self.q, 0)

    @property
    def q2(self) -> int:
        return max(-self.q, 0)


@dataclass(frozen=True)
class TwoWayEvents:
    A1: int
    A2: int
    D1: int
    D2: int
    M: int


@dataclass(frozen=True)
class StationaryDistribution:
    support: np.ndarray
    probabilities: np.ndarray
    truncation_mass_bound: float
    residual: float = 0.0

    @property
    def q_max(self) -> int:
        return int(self.support[-1])

    def expect(self, f) -> float:
        return float(np.dot(self.probabilities, f(self.support)))

    @property
    def mean_positive(self) -> float:
        return self.expect(lambda q: np.maximum(q, 0))

    @property
    def mean_negative(self) -> float:
        return self.expect(lambda q: np.maximum(-q, 0))

    def __getitem__(self, q: int) -> float:
        k = q + self.q_max
        if 0 <= k < len(self.probabilities):
            return float(self.probabilities[k])
        return 0.0


# ---------------------------------------------------------------------------
# simulation kernels


@njit(cache=True, nogil=True)
def _step(seed, fam1, mean1, key1, fam2, mean2, key2, g1, g2, positional, q, slot):
    q1 = q if q > 0 else 0
    q2 = -q if q < 0 else 0
    d1 = abandon(seed, 1, slot, q1, g1, positional)
    d2 = abandon(seed, 2, slot, q2, g2, positional)
    a1 = 0
    for c in range(fam1.shape[0]):
        a1 += arrival(seed, fam1[c], mean1[c], key1[c], slot)
    a2 = 0
    for c in range(fam2.shape[0]):
        a2 += arrival(seed, fam2[c], mean2[c], key2[c], slot)
    x1 = q1 - d1 + a1
    x2 = q2 - d2 + a2
    m = x1 if x1 < x2 else x2
    return x1 - x2, a1, a2, d1, d2, m


@njit(cache=True, nogil=True)
def _run(seed, fam1, mean1, key1, fam2, mean2, key2, g1, g2, positional, q, slot0, horizon, trace, msum):
    """Simulate ``horizon`` slots.  Fills ``trace`` if it has rows; always
    writes per-slot matchings into ``msum``."""
    record = trace.shape[0] > 0
    for k in range(horizon):
        q, a1, a2, d1, d2, m = _step(seed, fam1, mean1, key1, fam2, mean2, key2, g1, g2, positional, q, slot0 + k)
        msum[k] = m
        if record:
            trace[k, 0] = q
            trace[k, 1] = a1
            trace[k, 2] = a2
            trace[k, 3] = d1
            trace[k, 4] = d2
            trace[k, 5] = m
    return q


def step_two_way(state: TwoWayState, params: TwoWayParams, slot: int, streams: RandomStreams, mode="positional"):
    q, a1, a2, d1, d2, m = _step(streams.key, *params.kernel_args(), mode == "positional", int(state.q), int(slot))
    return TwoWayState(int(q)), TwoWayEvents(int(a1), int(a2), int(d1), int(d2), int(m))


def simulate_two_way(params: TwoWayParams, horizon: int, streams: RandomStreams, q0: int = 0, mode="positional", slot0=0) -> Trajectory:
    trace = np.zeros((horizon, len(TRACE_FIELDS)), dtype=np.int64)
    msum = np.zeros(horizon, dtype=np.int64)
    _run(streams.key, *params.kernel_args(), mode == "positional", int(q0), slot0, horizon, trace, msum)
    return Trajectory.from_array(trace, TRACE_FIELDS, {"q": int(q0)}, slot0)


def matchings_series(params: TwoWayParams, horizon: int, streams: RandomStreams, q0=0, mode="positional") -> np.ndarray:
    msum = np.zeros(horizon, dtype=np.int64)
    _run(streams.key, *params.kernel_args(), mode == "positional", int(q0), 0, horizon,
         np.zeros((0, len(TRACE_FIELDS)), dtype=np.int64), msum)
    return msum


# ---------------------------------------------------------------------------
# exact stationary analysis


def recommended_q_max(params: TwoWayParams) -> int:
    g = min(params.gamma1, params.gamma2)
    if g <= 0:
        raise PreconditionError("both abandonment probabilities must be positive")
    base = 10.0 * max(params.mu1, params.mu2, 1e-12) / g
    spread = max(len(params.pmf1()), len(params.pmf2()))
    return int(math.ceil(base)) + spread + 10


def transition_matrix(pmf1, pmf2, gamma1, gamma2, q_max) -> np.ndarray:
    """One-step transition matrix of q on [-q_max, q_max].

    Mass that would leave the window is put on the nearest boundary state.
    """
    n = 2 * q_max + 1
    diff = np.convolve(pmf1, pmf2[::-1])  # pmf of A1 - A2
    off = len(pmf2) - 1  # diff[j] is P(A1 - A2 = j - off)
    P = np.zeros((n, n))
    for q in range(-q_max, q_max + 1):
        if q >= 0:
            post = binom.pmf(np.arange(q + 1), q, gamma1)[::-1]  # values 0..q
            lo = 0
        else:
            r = -q
            post = binom.pmf(np.arange(r + 1), r, gamma2)  # values -r..0
            lo = -r
        row = np.convolve(post, diff)
        lo -= off  # value of row[0]
        idx = np.arange(len(row)) + lo + q_max
        below = idx < 0
        above = idx >= n
        inside = ~(below | above)
        target = P[q + q_max]
        target[idx[inside]] += row[inside]
        target[0] += row[below].sum()
        target[-1] += row[above].sum()
    return P


def solve_stationary_vector(P: np.ndarray, tol=1e-12, max_iter=10_000) -> tuple[np.ndarray, float]:
    """Stationary vector of a row-stochastic matrix: direct solve, then power
    iteration polish if the residual is above ``tol``."""
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        pi = np.full(n, 1.0 / n)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    res = float(np.abs(pi @ P - pi).sum())
    it = 0
    while res > tol and it < max_iter:
        pi = pi @ P
        pi /= pi.sum()
        res = float(np.abs(pi @ P - pi).sum())
        it += 1
    if res > tol:
        raise ConvergenceError(f"stationary residual {res:.3e} above {tol:.0e} after {it} iterations")
    return pi, res


def stationary_solve_pmf(pmf1, pmf2, gamma1, gamma2, q_max, max_boundary_mass=1e-6) -> StationaryDistribution:
    P = transition_matrix(np.asarray(pmf1, float), np.asarray(pmf2, float), gamma1, gamma2, q_max)
    pi, res = solve_stationary_vector(P)
    mass = float(pi[0] + pi[-1])
    if mass > max_boundary_mass:
        raise TruncationError(f"boundary mass {mass:.3e} exceeds {max_boundary_mass:.0e}; increase q_max")
    return StationaryDistribution(np.arange(-q_max, q_max + 1), pi, mass, res)


def stationary_solve(params: TwoWayParams, q_max: int | None = None) -> StationaryDistribution:
    if not (0 < params.gamma1 <= 1 and 0 < params.gamma2 <= 1):
        raise PreconditionError("stationary solve needs gamma1, gamma2 in (0, 1]")
    floor = 10.0 * max(params.mu1, params.mu2) / min(params.gamma1, params.gamma2)
    if q_max is None:
        q_max = recommended_q_max(params)
    elif q_max < floor:
        raise PreconditionError(f"q_max={q_max} is below 10*max(mu)/min(gamma)={floor:.1f}")
    return stationary_solve_pmf(params.pmf1(), params.pmf2(), params.gamma1, params.gamma2, int(q_max))


def throughput_exact(pi: StationaryDistribution, params: TwoWayParams) -> tuple[float, float]:
    """Matching rate computed from each side's flow balance."""
    thr1 = params.mu1 - params.gamma1 * pi.mean_positive
    thr2 = params.mu2 - params.gamma2 * pi.mean_negative
    return thr1, thr2


def identity_tolerance(pi: StationaryDistribution, params: TwoWayParams) -> float:
    return 1e-8 + pi.truncation_mass_bound * (params.mu1 + params.mu2 + params.gamma1 * pi.q_max)


def throughput_solve(params: TwoWayParams, q_max=None) -> ThroughputEstimate:
    pi = stationary_solve(params, q_max)
    thr1, thr2 = throughput_exact(pi, params)
    return ThroughputEstimate(0.5 * (thr1 + thr2), 0.0, Method.EXACT_TRUNCATED)


def throughput_mc(params: TwoWayParams, horizon: int, burn_in: int, replications: int, seed: int,
                  threads: int = 1, mode="positional") -> ThroughputEstimate:
    """Time-average matchings over slots ``[burn_in, horizon)``, averaged over
    replications.  The standard error comes from the spread across
    replications (batch means when there is only one)."""
    if horizon <= burn_in:
        raise ValueError("horizon must exceed burn_in")
    root = RandomStreams(seed)

    def one(r):
        return matchings_series(params, horizon, root.spawn(r), mode=mode)[burn_in:]

    series = fan_out(one, range(replications), threads)
    if replications == 1:
        value, se = mean_and_stderr(batch_means(series[0], 20))
    else:
        value, se = mean_and_stderr([s.mean() for s in series])
    return ThroughputEstimate(value, se, Method.MONTE_CARLO)


def classify_one_sided(lam: float, mu: float, gamma: float) -> Recurrence:
    """Stability of the system with abandonments on the service side only."""
    if not 0 < gamma <= 1:
        raise PreconditionError("service-side gamma must lie in (0, 1]")
    if lam < mu:
        return Recurrence.POSITIVE_RECURRENT
    if lam > mu:
        return Recurrence.TRANSIENT
    return Recurrence.CRITICAL
