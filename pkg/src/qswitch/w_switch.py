"""Three-way matching in a W-topology.

Two request types share the middle qubit queue: type 1 needs qubits from
queues 1 and 2, type 2 from queues 2 and 3.  A control bit ``X`` decides which
type is matched first in each slot (``X = 0`` gives priority to type 1).

Abandonments of the two outer queues are drawn from one positional stream,
queue 3 taking the positions after queue 1's, so that ``D_1 + D_3`` is
exactly the abandonment count of a single queue of length ``q1 + q3``.  This
is what makes the fully backlogged system path-wise identical to a two-way
system fed by ``S_1 + S_3`` and ``S_2``.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .rng import (
    BACKLOG,
    REQUEST_BASE,
    TIEBREAK,
    ArrivalSpec,
    RandomStreams,
    abandon_positional,
    arrival,
    attempt_sequential,
    uniform,
)
from .stats import (
    MCConfig,
    Method,
    PreconditionError,
    ThroughputEstimate,
    fan_out,
    pooled_batch_estimate,
)
from .trajectory import Trajectory
from .two_way import TwoWayParams, stationary_solve, throughput_exact
from .y_switch import BACKLOGGED, YParams, _Backlogged

REQ1_KEY = REQUEST_BASE + 1
REQ2_KEY = REQUEST_BASE + 2
TRACE_FIELDS = (
    "n1", "n2", "q1", "q2", "q3",
    "A1", "A2", "S1", "S2", "S3", "D1", "D2", "D3",
    "M1", "M2", "successes1", "successes2", "X",
)


class Policy(enum.IntEnum):
    MAX_WEIGHT = 0
    PRIORITY1 = 1  # X == 0 always
    PRIORITY2 = 2  # X == 1 always

    @classmethod
    def parse(cls, name) -> "Policy":
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("-", "_").replace(" ", "_")
        aliases = {"maxweight": cls.MAX_WEIGHT, "max_weight": cls.MAX_WEIGHT,
                   "priority1": cls.PRIORITY1, "priority_1": cls.PRIORITY1,
                   "priority2": cls.PRIORITY2, "priority_2": cls.PRIORITY2}
        if key not in aliases:
            raise ValueError(f"unknown policy {name!r}")
        return aliases[key]


class Mode(enum.Enum):
    NORMAL = "normal"
    BACKLOG_BOTH = "backlog_both"
    BACKLOG_1 = "backlog_1"
    BACKLOG_2 = "backlog_2"


class Region(enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    BOUNDARY = "Boundary"


@dataclass(frozen=True)
class WParams:
    req1: ArrivalSpec
    req2: ArrivalSpec
    qub1: ArrivalSpec
    qub2: ArrivalSpec
    qub3: ArrivalSpec
    gamma: float
    p: float

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")

    @property
    def lambdas(self) -> tuple[float, float]:
        return self.req1.mean, self.req2.mean

    @property
    def mus(self) -> tuple[float, float, float]:
        return self.qub1.mean, self.qub2.mean, self.qub3.mean

    def with_lambdas(self, lam1=None, lam2=None) -> "WParams":
        r1 = self.req1 if lam1 is None else self.req1.with_mean(lam1)
        r2 = self.req2 if lam2 is None else self.req2.with_mean(lam2)
        return WParams(r1, r2, self.qub1, self.qub2, self.qub3, self.gamma, self.p)

    def backlogged_two_way(self) -> TwoWayParams:
        """Two-way system driven by S1 + S3 against S2 (shared streams)."""
        return TwoWayParams((self.qub1, self.qub3), self.qub2, self.gamma, self.gamma, keys1=(1, 3), keys2=(2,))

    def y_reduction(self, which: int = 1) -> YParams:
        """Y-system made of request type ``which`` and its two qubit queues."""
        if which == 1:
            return YParams(self.req1, self.qub1, self.qub2, self.gamma, self.gamma, self.p)
        return YParams(self.req2, self.qub3, self.qub2, self.gamma, self.gamma, self.p)

    def kernel_args(self):
        return (
            self.req1.code, self.req1.mean, self.req2.code, self.req2.mean,
            self.qub1.code, self.qub1.mean, self.qub2.code, self.qub2.mean,
            self.qub3.code, self.qub3.mean, float(self.gamma), float(self.p),
        )


@dataclass(frozen=True)
class WState:
    n1: int | _Backlogged = 0
    n2: int | _Backlogged = 0
    q1: int = 0
    q2: int = 0
    q3: int = 0


@dataclass(frozen=True)
class WEvents:
    A1: int
    A2: int
    S1: int
    S2: int
    S3: int
    D1: int
    D2: int
    D3: int
    M1: int
    M2: int
    successes1: int
    successes2: int
    X: int


def _nk(n) -> int:
    return BACKLOG if n is BACKLOGGED else int(n)


def _nf(n):
    return BACKLOGGED if n == BACKLOG else int(n)


@njit(cache=True, nogil=True)
def _control(policy, c1, c2, seed, slot):
    if policy == 1:
        return 0
    if policy == 2:
        return 1
    if c1 == c2:
        return 0 if uniform(seed, TIEBREAK, 0, slot, 0) < 0.5 else 1
    if c1 == BACKLOG:
        return 0
    if c2 == BACKLOG:
        return 1
    return 0 if c1 > c2 else 1


@njit(cache=True, nogil=True)
def _step(seed, rf1, rm1, rf2, rm2, f1, m1, f2, m2, f3, m3, g, p, policy, n1, n2, q1, q2, q3, slot):
    d1 = abandon_positional(seed, 1, slot, q1, g, 0)
    d3 = abandon_positional(seed, 1, slot, q3, g, q1)
    d2 = abandon_positional(seed, 2, slot, q2, g, 0)
    a1 = arrival(seed, rf1, rm1, REQ1_KEY, slot)
    a2 = arrival(seed, rf2, rm2, REQ2_KEY, slot)
    s1 = arrival(seed, f1, m1, 1, slot)
    s2 = arrival(seed, f2, m2, 2, slot)
    s3 = arrival(seed, f3, m3, 3, slot)
    x1 = q1 - d1 + s1
    x2 = q2 - d2 + s2
    x3 = q3 - d3 + s3
    c1 = BACKLOG if n1 == BACKLOG else n1 + a1
    c2 = BACKLOG if n2 == BACKLOG else n2 + a2
    x = _control(policy, c1, c2, seed, slot)
    if x == 0:
        k1, ok1 = attempt_sequential(seed, REQ1_KEY, slot, min(x1, x2), c1, p)
        x1 -= k1
        x2 -= k1
        k2, ok2 = attempt_sequential(seed, REQ2_KEY, slot, min(x2, x3), c2, p)
        x2 -= k2
        x3 -= k2
    else:
        k2, ok2 = attempt_sequential(seed, REQ2_KEY, slot, min(x2, x3), c2, p)
        x2 -= k2
        x3 -= k2
        k1, ok1 = attempt_sequential(seed, REQ1_KEY, slot, min(x1, x2), c1, p)
        x1 -= k1
        x2 -= k1
    if n1 != BACKLOG:
        n1 = n1 + a1 - ok1
    if n2 != BACKLOG:
        n2 = n2 + a2 - ok2
    return n1, n2, x1, x2, x3, a1, a2, s1, s2, s3, d1, d2, d3, k1, k2, ok1, ok2, x


@njit(cache=True, nogil=True)
def _run(seed, rf1, rm1, rf2, rm2, f1, m1, f2, m2, f3, m3, g, p, policy,
         n1, n2, q1, q2, q3, slot0, horizon, trace, succ, nlen, qsum):
    record = trace.shape[0] > 0
    for k in range(horizon):
        out = _step(seed, rf1, rm1, rf2, rm2, f1, m1, f2, m2, f3, m3, g, p, policy, n1, n2, q1, q2, q3, slot0 + k)
        n1, n2, q1, q2, q3 = out[0], out[1], out[2], out[3], out[4]
        succ[k, 0] = out[15]
        succ[k, 1] = out[16]
        nlen[k, 0] = n1
        nlen[k, 1] = n2
        qsum[k] = q1 + q2 + q3
        if record:
            for j in range(18):
                trace[k, j] = out[j]
    return n1, n2, q1, q2, q3


def control_signal(policy, n1_plus_a1, n2_plus_a2, slot: int, streams: RandomStreams) -> int:
    """Priority bit X; a backlogged count compares as +infinity."""
    return int(_control(int(Policy.parse(policy)), _nk(n1_plus_a1), _nk(n2_plus_a2), streams.key, int(slot)))


def step_w(state: WState, params: WParams, policy, slot: int, streams: RandomStreams):
    out = _step(streams.key, *params.kernel_args(), int(Policy.parse(policy)),
                _nk(state.n1), _nk(state.n2), int(state.q1), int(state.q2), int(state.q3), int(slot))
    out = [int(v) for v in out]
    new = WState(_nf(out[0]), _nf(out[1]), out[2], out[3], out[4])
    return new, WEvents(*out[5:])


def _mode_setup(mode, policy, state0: WState | None):
    mode = Mode(mode)
    policy = Policy.parse(policy)
    s = state0 or WState()
    n1, n2 = _nk(s.n1), _nk(s.n2)
    if mode is Mode.BACKLOG_BOTH:
        n1 = n2 = BACKLOG
    elif mode is Mode.BACKLOG_1:
        n1, policy = BACKLOG, Policy.PRIORITY1
        n2 = max(n2, 0)
    elif mode is Mode.BACKLOG_2:
        n2, policy = BACKLOG, Policy.PRIORITY2
        n1 = max(n1, 0)
    elif BACKLOG in (n1, n2):
        raise ValueError("normal mode needs finite request queues")
    return policy, (n1, n2, int(s.q1), int(s.q2), int(s.q3))


def simulate_w(params: WParams, policy, mode="normal", horizon: int = 1000, seed=0,
               state0: WState | None = None, slot0: int = 0, record=True):
    """Simulate the W system.  Backlogged request queues are recorded as -1.

    ``backlog_1`` / ``backlog_2`` force strict priority to the backlogged type.
    With ``record=False`` only the compact per-slot series are kept and a
    dict of arrays is returned instead of a :class:`Trajectory`.
    """
    streams = seed if isinstance(seed, RandomStreams) else RandomStreams(seed)
    policy, init = _mode_setup(mode, policy, state0)
    trace = np.zeros((horizon if record else 0, len(TRACE_FIELDS)), dtype=np.int64)
    succ = np.zeros((horizon, 2), dtype=np.int64)
    nlen = np.zeros((horizon, 2), dtype=np.int64)
    qsum = np.zeros(horizon, dtype=np.int64)
    _run(streams.key, *params.kernel_args(), int(policy), *init, slot0, horizon, trace, succ, nlen, qsum)
    if not record:
        return {"successes": succ, "n": nlen, "qsum": qsum}
    names = dict(zip(("n1", "n2", "q1", "q2", "q3"), init))
    return Trajectory.from_array(trace, TRACE_FIELDS, names, slot0)


# ---------------------------------------------------------------------------
# throughput constants


@dataclass
class ThroughputConstants:
    c12: ThroughputEstimate
    c1_bar: ThroughputEstimate
    c2_bar: ThroughputEstimate
    c1_lower: ThroughputEstimate
    c2_lower: ThroughputEstimate
    c1_of: dict[float, ThroughputEstimate] = field(default_factory=dict)
    c2_of: dict[float, ThroughputEstimate] = field(default_factory=dict)
    c12_mc: ThroughputEstimate | None = None
    total_priority1: ThroughputEstimate | None = None  # c1_bar + c2_lower, one run
    total_priority2: ThroughputEstimate | None = None  # c1_lower + c2_bar, one run

    def c1_at(self, lam2: float) -> ThroughputEstimate | None:
        """C_1(lam2); None where the partially backlogged system is unstable."""
        return _lookup(self.c1_of, lam2, self.c2_lower.value)

    def c2_at(self, lam1: float) -> ThroughputEstimate | None:
        return _lookup(self.c2_of, lam1, self.c1_lower.value)

    def rows(self):
        yield "c12", self.c12
        if self.c12_mc is not None:
            yield "c12_mc", self.c12_mc
        yield "c1_bar", self.c1_bar
        yield "c2_bar", self.c2_bar
        yield "c1_lower", self.c1_lower
        yield "c2_lower", self.c2_lower
        if self.total_priority1 is not None:
            yield "c1_bar_plus_c2_lower", self.total_priority1
            yield "c1_lower_plus_c2_bar", self.total_priority2


def _lookup(table: dict, x: float, limit: float):
    if x >= limit:
        return None
    keys = sorted(table)
    for k in keys:
        if math.isclose(k, x, rel_tol=0, abs_tol=1e-12):
            return table[k]
    i = bisect.bisect_left(keys, x)
    if 0 < i < len(keys):
        lo, hi = keys[i - 1], keys[i]
        w = (x - lo) / (hi - lo)
        a, b = table[lo], table[hi]
        return ThroughputEstimate((1 - w) * a.value + w * b.value, max(a.stderr, b.stderr), a.method)
    raise KeyError(f"no partial-backlog estimate brackets {x}")


def c12_exact(params: WParams, q_max=None) -> ThroughputEstimate:
    two = params.backlogged_two_way()
    pi = stationary_solve(two, q_max)
    thr1, thr2 = throughput_exact(pi, two)
    return ThroughputEstimate(params.p * 0.5 * (thr1 + thr2), 0.0, Method.EXACT_TRUNCATED)


def _run_rates(params: WParams, policy, mode, mc: MCConfig, salt: int):
    root = RandomStreams(mc.seed).spawn(salt)

    def one(r):
        out = simulate_w(params, policy, mode, mc.horizon, root.spawn(r), record=False)
        return out["successes"][mc.burn_slots:]

    runs = fan_out(one, range(mc.replications), mc.threads)
    r1 = pooled_batch_estimate([s[:, 0] for s in runs], mc.batches)
    r2 = pooled_batch_estimate([s[:, 1] for s in runs], mc.batches)
    tot = pooled_batch_estimate([s.sum(axis=1) for s in runs], mc.batches)
    return r1, r2, tot


def estimate_partial(params: WParams, which: int, other_lambda: float, mc: MCConfig,
                     other_lower: float | None = None) -> ThroughputEstimate:
    """C_1(lambda_2) (``which=1``) or C_2(lambda_1) (``which=2``) by simulation
    with request type ``which`` backlogged and given strict priority."""
    if other_lower is not None and other_lambda >= other_lower:
        raise PreconditionError(
            f"partially backlogged system is unstable: lambda={other_lambda} >= {other_lower}")
    if which == 1:
        p2 = params.with_lambdas(lam2=other_lambda)
        r1, _, _ = _run_rates(p2, Policy.PRIORITY1, Mode.BACKLOG_1, mc, salt=_salt(1, other_lambda))
        return r1
    p1 = params.with_lambdas(lam1=other_lambda)
    _, r2, _ = _run_rates(p1, Policy.PRIORITY2, Mode.BACKLOG_2, mc, salt=_salt(2, other_lambda))
    return r2


def _salt(which: int, lam: float) -> int:
    return 1000 + which * 10_000_019 + int(round(lam * 1e6))


def estimate_constants(params: WParams, mc: MCConfig, lambda2_values=(), lambda1_values=(),
                       q_max=None) -> ThroughputConstants:
    """All throughput constants of the backlogged systems.

    C_{1,2} is solved exactly and also estimated by simulation; the bars and
    lower constants come from backlogged runs under each strict priority.
    C_1(lambda_2) is estimated for ``0`` and each requested ``lambda_2`` below
    the lower constant of type 2 (values above it are skipped), and likewise
    for C_2.
    """
    exact = c12_exact(params, q_max)
    b1, l2, tot1 = _run_rates(params, Policy.PRIORITY1, Mode.BACKLOG_BOTH, mc, salt=1)
    l1, b2, tot2 = _run_rates(params, Policy.PRIORITY2, Mode.BACKLOG_BOTH, mc, salt=2)
    _, _, mw = _run_rates(params, Policy.MAX_WEIGHT, Mode.BACKLOG_BOTH, mc, salt=3)
    const = ThroughputConstants(exact, b1, b2, l1, l2, c12_mc=mw, total_priority1=tot1, total_priority2=tot2)
    for lam2 in sorted({0.0, *map(float, lambda2_values)}):
        if lam2 < l2.value:
            const.c1_of[lam2] = estimate_partial(params, 1, lam2, mc)
    for lam1 in sorted({0.0, *map(float, lambda1_values)}):
        if lam1 < l1.value:
            const.c2_of[lam1] = estimate_partial(params, 2, lam1, mc)
    return const


def classify_w(lam1: float, lam2: float, constants: ThroughputConstants, nsigma: float = 3.0) -> Region:
    """Stable / Unstable / Boundary by the three capacity inequalities.

    Where C_1(lambda_2) is undefined (lambda_2 at or above the lower constant of
    type 2) the binding constraint is the sum, so only the sum is checked for
    that coordinate; likewise for C_2.
    """
    checks = [(lam1 + lam2, constants.c12)]
    c1 = constants.c1_at(lam2)
    if c1 is not None:
        checks.append((lam1, c1))
    c2 = constants.c2_at(lam1)
    if c2 is not None:
        checks.append((lam2, c2))
    boundary = False
    for lhs, est in checks:
        band = nsigma * est.stderr
        if lhs > est.value + band:
            return Region.UNSTABLE
        if lhs >= est.value - band:
            boundary = True
    return Region.BOUNDARY if boundary else Region.STABLE


def region_inequalities(lam1: float, lam2: float, constants: ThroughputConstants) -> bool:
    """Plain point-estimate version of the stability condition (no bands)."""
    if lam1 + lam2 >= constants.c12.value:
        return False
    c1 = constants.c1_at(lam2)
    if c1 is not None and lam1 >= c1.value:
        return False
    c2 = constants.c2_at(lam1)
    if c2 is not None and lam2 >= c2.value:
        return False
    return True


def extend_partials(constants: ThroughputConstants, params: WParams, mc: MCConfig,
                    lambda2_values=(), lambda1_values=(), threads: int = 1) -> ThroughputConstants:
    """Add C_1(lambda_2) / C_2(lambda_1) estimates for more arrival rates.

    Rates at or above the relevant lower constant are skipped.
    """
    jobs = [(1, float(l)) for l in lambda2_values
            if float(l) < constants.c2_lower.value and float(l) not in constants.c1_of]
    jobs += [(2, float(l)) for l in lambda1_values
             if float(l) < constants.c1_lower.value and float(l) not in constants.c2_of]
    inner = MCConfig(mc.horizon, mc.burn_in, mc.batches, mc.replications, mc.seed, 1)
    results = fan_out(lambda job: estimate_partial(params, job[0], job[1], inner), jobs, threads)
    for (which, lam), est in zip(jobs, results):
        (constants.c1_of if which == 1 else constants.c2_of)[lam] = est
    return constants


@dataclass(frozen=True)
class RegionCell:
    lambda1: float
    lambda2: float
    region: Region
    inequalities_hold: bool
    case: str


def region_grid(constants: ThroughputConstants, lambda1_values, lambda2_values, nsigma: float = 3.0):
    """Classify every (lambda_1, lambda_2) cell and label its transient case."""
    from .fluid_model import CaseLabel, FluidParams, classify_transient

    cells = []
    for lam2 in lambda2_values:
        for lam1 in lambda1_values:
            region = classify_w(lam1, lam2, constants, nsigma)
            ok = region_inequalities(lam1, lam2, constants)
            if ok:
                case = classify_transient(FluidParams.from_constants(constants, lam1, lam2)).label.value
            else:
                case = CaseLabel.UNSTABLE.value
            cells.append(RegionCell(float(lam1), float(lam2), region, ok, case))
    return cells
