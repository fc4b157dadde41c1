"""Three-way matching in a Y-topology: one request queue, two qubit queues.

Matching attempts in a slot draw ``Y_1, Y_2, ...`` sequentially and stop when
a qubit side runs out or the pending requests are all served; failed
attempts burn one qubit of each type but keep the request.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .rng import BACKLOG, REQUEST_BASE, ArrivalSpec, RandomStreams, abandon, arrival, attempt_sequential
from .stats import MCConfig, Recurrence, ThroughputEstimate, fan_out, pooled_batch_estimate
from .trajectory import Trajectory
from .two_way import TwoWayParams, stationary_solve, throughput_exact

REQUEST_KEY = REQUEST_BASE + 1
TRACE_FIELDS = ("n", "q1", "q2", "A", "S1", "S2", "D1", "D2", "M", "successes")


class _Backlogged:
    """Marker for an infinitely backlogged request queue."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BACKLOGGED"


BACKLOGGED = _Backlogged()


def _n_to_kernel(n) -> int:
    return BACKLOG if n is BACKLOGGED else int(n)


def _n_from_kernel(n):
    return BACKLOGGED if n == BACKLOG else int(n)


@dataclass(frozen=True)
class YParams:
    req: ArrivalSpec
    qub1: ArrivalSpec
    qub2: ArrivalSpec
    gamma1: float
    gamma2: float
    p: float

    def __post_init__(self):
        if not (0 < self.gamma1 <= 1 and 0 < self.gamma2 <= 1):
            raise ValueError("Y-topology gammas must lie in (0, 1]")
        if not 0 < self.p <= 1:
            raise ValueError("success probability p must lie in (0, 1]")

    @property
    def lam(self) -> float:
        return self.req.mean

    def with_lambda(self, lam: float) -> "YParams":
        return YParams(self.req.with_mean(lam), self.qub1, self.qub2, self.gamma1, self.gamma2, self.p)

    def two_way(self) -> TwoWayParams:
        """The qubit pair seen as a two-way matching system."""
        return TwoWayParams(self.qub1, self.qub2, self.gamma1, self.gamma2)

    def kernel_args(self):
        return (
            self.req.code, self.req.mean,
            self.qub1.code, self.qub1.mean,
            self.qub2.code, self.qub2.mean,
            float(self.gamma1), float(self.gamma2), float(self.p),
        )


@dataclass(frozen=True)
class YState:
    n: int | _Backlogged = 0
    q1: int = 0
    q2: int = 0

    @property
    def backlogged(self) -> bool:
        return self.n is BACKLOGGED


@dataclass(frozen=True)
class YEvents:
    A: int
    S1: int
    S2: int
    D1: int
    D2: int
    M: int
    successes: int


@njit(cache=True, nogil=True)
def _step(seed, rf, rm, f1, m1, f2, m2, g1, g2, p, n, q1, q2, slot):
    d1 = abandon(seed, 1, slot, q1, g1, True)
    d2 = abandon(seed, 2, slot, q2, g2, True)
    a = arrival(seed, rf, rm, REQUEST_KEY, slot)
    s1 = arrival(seed, f1, m1, 1, slot)
    s2 = arrival(seed, f2, m2, 2, slot)
    x1 = q1 - d1 + s1
    x2 = q2 - d2 + s2
    cap = x1 if x1 < x2 else x2
    req = BACKLOG if n == BACKLOG else n + a
    m, s = attempt_sequential(seed, REQUEST_KEY, slot, cap, req, p)
    n_new = BACKLOG if n == BACKLOG else n + a - s
    return n_new, x1 - m, x2 - m, a, s1, s2, d1, d2, m, s


@njit(cache=True, nogil=True)
def _run(seed, rf, rm, f1, m1, f2, m2, g1, g2, p, n, q1, q2, slot0, horizon, trace, succ, nlen):
    record = trace.shape[0] > 0
    for k in range(horizon):
        n, q1, q2, a, s1, s2, d1, d2, m, s = _step(seed, rf, rm, f1, m1, f2, m2, g1, g2, p, n, q1, q2, slot0 + k)
        succ[k] = s
        nlen[k] = n
        if record:
            trace[k, 0] = n
            trace[k, 1] = q1
            trace[k, 2] = q2
            trace[k, 3] = a
            trace[k, 4] = s1
            trace[k, 5] = s2
            trace[k, 6] = d1
            trace[k, 7] = d2
            trace[k, 8] = m
            trace[k, 9] = s
    return n, q1, q2


def step_y(state: YState, params: YParams, slot: int, streams: RandomStreams):
    out = _step(streams.key, *params.kernel_args(), _n_to_kernel(state.n), int(state.q1), int(state.q2), int(slot))
    n, q1, q2, a, s1, s2, d1, d2, m, s = (int(v) for v in out)
    return YState(_n_from_kernel(n), q1, q2), YEvents(a, s1, s2, d1, d2, m, s)


def simulate_y(params: YParams, horizon: int, streams: RandomStreams, state0: YState = YState(), slot0=0) -> Trajectory:
    """Full per-slot trajectory.  A backlogged ``n`` is recorded as -1."""
    trace = np.zeros((horizon, len(TRACE_FIELDS)), dtype=np.int64)
    succ = np.zeros(horizon, dtype=np.int64)
    nlen = np.zeros(horizon, dtype=np.int64)
    _run(streams.key, *params.kernel_args(), _n_to_kernel(state0.n), int(state0.q1), int(state0.q2),
         slot0, horizon, trace, succ, nlen)
    init = {"n": _n_to_kernel(state0.n), "q1": state0.q1, "q2": state0.q2}
    return Trajectory.from_array(trace, TRACE_FIELDS, init, slot0)


def success_series(params: YParams, horizon: int, streams: RandomStreams, state0: YState = YState()):
    """Per-slot successes and end-of-slot request queue lengths."""
    succ = np.zeros(horizon, dtype=np.int64)
    nlen = np.zeros(horizon, dtype=np.int64)
    _run(streams.key, *params.kernel_args(), _n_to_kernel(state0.n), int(state0.q1), int(state0.q2),
         0, horizon, np.zeros((0, len(TRACE_FIELDS)), dtype=np.int64), succ, nlen)
    return succ, nlen


def y_capacity(params: YParams, q_max: int | None = None) -> float:
    """p times the matching rate of the qubit pair with backlogged requests."""
    two = params.two_way()
    pi = stationary_solve(two, q_max)
    thr1, thr2 = throughput_exact(pi, two)
    return params.p * 0.5 * (thr1 + thr2)


def classify_y(params: YParams, capacity: float | None = None) -> Recurrence:
    cap = y_capacity(params) if capacity is None else capacity
    if params.lam < cap:
        return Recurrence.POSITIVE_RECURRENT
    if params.lam > cap:
        return Recurrence.TRANSIENT
    return Recurrence.CRITICAL


@dataclass(frozen=True)
class YRunSummary:
    success_rate: ThroughputEstimate
    mean_requests: ThroughputEstimate
    final_requests: list


def y_success_rate(params: YParams, mc: MCConfig, backlogged=False) -> YRunSummary:
    """Long-run success rate (and time-average N) by batch means over replications."""
    root = RandomStreams(mc.seed)
    state0 = YState(BACKLOGGED if backlogged else 0)

    def one(r):
        succ, nlen = success_series(params, mc.horizon, root.spawn(r), state0)
        return succ[mc.burn_slots:], nlen[mc.burn_slots:], int(nlen[-1])

    runs = fan_out(one, range(mc.replications), mc.threads)
    rate = pooled_batch_estimate([r[0] for r in runs], mc.batches)
    if backlogged:
        nbar = ThroughputEstimate(float("inf"), 0.0)
    else:
        nbar = pooled_batch_estimate([r[1] for r in runs], mc.batches)
    return YRunSummary(rate, nbar, [r[2] for r in runs])
