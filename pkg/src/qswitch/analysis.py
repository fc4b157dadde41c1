"""Fluid-scaling harness and coupled bounding processes for the Y-topology."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .fluid_model import FluidParams, solve_fluid
from .rng import REQUEST_BASE, RandomStreams, abandon_positional, arrival, attempt_sequential
from .stats import fan_out, mean_and_stderr
from .w_switch import Policy, WParams, WState, simulate_w
from .y_switch import YParams

DELTA = 0.05


# ---------------------------------------------------------------------------
# fluid scaling


@dataclass(frozen=True)
class ScalingConfig:
    k_values: tuple[int, ...]
    n0: tuple[float, float]
    horizon: float
    params: WParams
    policy: Policy = Policy.MAX_WEIGHT
    seed: int = 0
    replications: int = 1
    delta: float = DELTA

    def __post_init__(self):
        if any(int(k) < 1 for k in self.k_values):
            raise ValueError("k values must be positive integers")
        if min(self.n0) < 0 or sum(self.n0) <= 0:
            raise ValueError("n0 must be nonnegative and nonzero")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


@dataclass(frozen=True)
class ScaledRun:
    """One k-scaled trajectory on the grid t = j / k, j = 0..ceil(kT)."""

    k: int
    times: np.ndarray
    scaled_n: np.ndarray  # (len, 2)
    scaled_q: np.ndarray  # (len,) total qubits / k
    fluid: np.ndarray  # (len, 2)

    @property
    def deviation(self) -> float:
        return float(np.max(np.abs(self.scaled_n - self.fluid).sum(axis=1)))

    def qubit_sup(self, delta: float = DELTA) -> float:
        mask = self.times >= delta
        return float(self.scaled_q[mask].max()) if mask.any() else 0.0


@dataclass(frozen=True)
class ScalingRecord:
    k: int
    deviation: float
    deviation_stderr: float
    qubit_sup: float
    per_seed: tuple[float, ...] = field(default=())


def scaled_run(config: ScalingConfig, fluid: FluidParams, k: int, replication: int = 0) -> ScaledRun:
    """Simulate ``ceil(kT)`` slots from ``N(0) = floor(k n0)``, ``Q(0) = 0``."""
    k = int(k)
    slots = math.ceil(k * config.horizon)
    n_init = (math.floor(k * config.n0[0]), math.floor(k * config.n0[1]))
    streams = RandomStreams(config.seed).spawn(k).spawn(replication)
    out = simulate_w(config.params, config.policy, "normal", slots, streams, WState(*n_init), record=False)
    n = np.vstack([np.array(n_init, dtype=float), out["n"].astype(float)])
    q = np.concatenate([[0.0], out["qsum"].astype(float)])
    times = np.arange(slots + 1) / k
    path = solve_fluid(config.n0, fluid, t_end=max(config.horizon, times[-1]))
    return ScaledRun(k, times, n / k, q / k, path.sample(times))


def scaled_deviation(config: ScalingConfig, fluid: FluidParams, threads: int = 1) -> list[ScalingRecord]:
    """Sup-norm distance to the fluid path and qubit sup-norm on [delta, T], per k.

    Values are averaged over ``config.replications`` independent seeds.
    """
    jobs = [(k, r) for k in config.k_values for r in range(config.replications)]
    runs = fan_out(lambda kr: scaled_run(config, fluid, *kr), jobs, threads)
    records = []
    for k in config.k_values:
        mine = [run for (kk, _), run in zip(jobs, runs) if kk == k]
        devs = np.array([r.deviation for r in mine])
        m, se = mean_and_stderr(devs) if len(devs) > 1 else (float(devs[0]), 0.0)
        records.append(ScalingRecord(int(k), m, se, max(r.qubit_sup(config.delta) for r in mine), tuple(devs)))
    return records


def count_inversions(values) -> int:
    """Number of adjacent increases in a sequence expected to decrease."""
    return int(sum(1 for a, b in zip(values, values[1:]) if b > a))


# ---------------------------------------------------------------------------
# pure-abandonment queue


@njit(cache=True, nogil=True)
def _gi_m_inf(seed, fam, mu, g, q0, t, key):
    q = q0
    for s in range(t):
        q = q - abandon_positional(seed, key, s, q, g, 0) + arrival(seed, fam, mu, key, s)
    return q


def gi_m_inf_mean(mu: float, gamma: float, q0: float, t) -> np.ndarray | float:
    """Mean of a pure-abandonment queue after ``t`` slots."""
    return (q0 - mu / gamma) * (1 - gamma) ** np.asarray(t, dtype=float) + mu / gamma


def gi_m_inf_mean_check(mu, gamma, q0: int, t: int, replications: int, seed, family="poisson"):
    """(empirical mean, its stderr, analytic mean) after ``t`` slots."""
    from .rng import ArrivalSpec

    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    spec = getattr(ArrivalSpec, family)(mu)
    root = RandomStreams(seed)
    vals = np.array([_gi_m_inf(root.spawn(r).key, spec.code, spec.mean, float(gamma), int(q0), int(t), 1)
                     for r in range(replications)], dtype=float)
    m, se = mean_and_stderr(vals)
    return m, se, float(gi_m_inf_mean(mu, gamma, q0, t))


# ---------------------------------------------------------------------------
# coupled processes for the Y-topology

COUPLED_FIELDS = ("N", "Q1", "Q2", "Nbar", "Qlow1", "Qlow2", "Qhigh1", "Qhigh2")
REQUEST_KEY = REQUEST_BASE + 1


@njit(cache=True, nogil=True)
def _coupled(seed, rf, rm, f1, m1, f2, m2, g1, g2, p, n0, q10, q20, horizon, out):
    n, q1, q2 = n0, q10, q20
    nb, l1, l2 = n0, q10, q20
    h1, h2 = q10, q20
    out[0, 0], out[0, 1], out[0, 2] = n, q1, q2
    out[0, 3], out[0, 4], out[0, 5] = nb, l1, l2
    out[0, 6], out[0, 7] = h1, h2
    for t in range(horizon):
        a = arrival(seed, rf, rm, REQUEST_KEY, t)
        s1 = arrival(seed, f1, m1, 1, t)
        s2 = arrival(seed, f2, m2, 2, t)
        # original system
        x1 = q1 - abandon_positional(seed, 1, t, q1, g1, 0) + s1
        x2 = q2 - abandon_positional(seed, 2, t, q2, g2, 0) + s2
        m, ok = attempt_sequential(seed, REQUEST_KEY, t, min(x1, x2), n + a, p)
        n, q1, q2 = n + a - ok, x1 - m, x2 - m
        # always-match qubits, requests served from the same Y draws
        y1 = l1 - abandon_positional(seed, 1, t, l1, g1, 0) + s1
        y2 = l2 - abandon_positional(seed, 2, t, l2, g2, 0) + s2
        mm = min(y1, y2)
        _, okb = attempt_sequential(seed, REQUEST_KEY, t, mm, nb + a, p)
        nb, l1, l2 = nb + a - okb, y1 - mm, y2 - mm
        # never-match qubits
        h1 = h1 - abandon_positional(seed, 1, t, h1, g1, 0) + s1
        h2 = h2 - abandon_positional(seed, 2, t, h2, g2, 0) + s2
        out[t + 1, 0], out[t + 1, 1], out[t + 1, 2] = n, q1, q2
        out[t + 1, 3], out[t + 1, 4], out[t + 1, 5] = nb, l1, l2
        out[t + 1, 6], out[t + 1, 7] = h1, h2


@njit(cache=True, nogil=True)
def _violations(out, counts):
    for t in range(out.shape[0]):
        n, q1, q2, nb, l1, l2, h1, h2 = out[t, 0], out[t, 1], out[t, 2], out[t, 3], out[t, 4], out[t, 5], out[t, 6], out[t, 7]
        if q1 < l1 or q2 < l2:
            counts[0] += 1
        if nb < n:
            counts[1] += 1
        if h1 < q1 or h2 < q2 or h1 < l1 or h2 < l2:
            counts[2] += 1
        if nb - l1 < n - q1 or nb - l2 < n - q2:
            counts[3] += 1


CHECKS = ("qubits_above_always_match", "requests_below_always_match",
          "qubits_below_never_match", "request_qubit_gap")


@dataclass(frozen=True)
class CoupledYRun:
    """Original Y system next to its two bounding processes, slots 0..T."""

    original: np.ndarray  # columns N, Q1, Q2
    process_i: np.ndarray  # columns Nbar, Qlow1, Qlow2 (qubits always matched)
    process_ii: np.ndarray  # columns Qhigh1, Qhigh2 (qubits only abandon)

    def violations(self) -> dict[str, int]:
        """Slots at which each dominance relation fails."""
        counts = np.zeros(4, dtype=np.int64)
        _violations(np.hstack([self.original, self.process_i, self.process_ii]), counts)
        return dict(zip(CHECKS, (int(c) for c in counts)))

    def first_violation(self, check: str) -> int | None:
        n, q1, q2 = self.original.T
        nb, l1, l2 = self.process_i.T
        h1, h2 = self.process_ii.T
        bad = {
            CHECKS[0]: (q1 < l1) | (q2 < l2),
            CHECKS[1]: nb < n,
            CHECKS[2]: (h1 < q1) | (h2 < q2) | (h1 < l1) | (h2 < l2),
            CHECKS[3]: (nb - l1 < n - q1) | (nb - l2 < n - q2),
        }[check]
        idx = np.flatnonzero(bad)
        return int(idx[0]) if len(idx) else None


def run_coupled_y(params: YParams, horizon: int, seed, n0: int = 0, q0=(0, 0)) -> CoupledYRun:
    """Step the three processes in lockstep on shared arrival, abandonment and Y draws."""
    streams = seed if isinstance(seed, RandomStreams) else RandomStreams(seed)
    out = np.zeros((horizon + 1, len(COUPLED_FIELDS)), dtype=np.int64)
    _coupled(streams.key, *params.kernel_args(), int(n0), int(q0[0]), int(q0[1]), int(horizon), out)
    return CoupledYRun(out[:, 0:3].copy(), out[:, 3:6].copy(), out[:, 6:8].copy())


def dominance_suite(params_list, seeds, horizon: int, threads: int = 1) -> dict[str, int]:
    """Total violating slots of each dominance relation over a parameter grid and seeds."""
    jobs = [(pi, s) for pi in range(len(params_list)) for s in seeds]

    def one(job):
        pi, s = job
        return run_coupled_y(params_list[pi], horizon, RandomStreams(s).spawn(pi)).violations()

    totals = dict.fromkeys(CHECKS, 0)
    for v in fan_out(one, jobs, threads):
        for key, c in v.items():
            totals[key] += c
    return totals
