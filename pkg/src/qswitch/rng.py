"""Seeded random primitives shared by every simulator.

Every draw is a pure function of ``(master_seed, purpose, queue, slot,
position)``: the key is hashed with a chained SplitMix64 finalizer and the
top 53 bits become a uniform on [0, 1).  Two processes that use the same key
see the same number, whatever order they ask in, which is what the coupled
constructions in :mod:`qswitch.analysis` rely on.

Queue indices used across the package:

* qubit queue ``j`` (and side ``j`` of the two-way system) -> ``j``
* request queue of type ``i`` -> ``REQUEST_BASE + i``
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

# purposes
ARRIVAL = 1
ABANDON = 2
MATCH = 3
TIEBREAK = 4

REQUEST_BASE = 16

# family codes used inside jitted kernels
FAM_BERNOULLI = 0
FAM_POISSON = 1
FAM_GEOMETRIC = 2
FAM_DETERMINISTIC = 3

# sentinel for "infinitely backlogged" request queues inside kernels
BACKLOG = -1

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
_S30 = _U64(30)
_S27 = _U64(27)
_S31 = _U64(31)
_S11 = _U64(11)
_INV53 = 1.0 / 9007199254740992.0


class Family(enum.Enum):
    BERNOULLI = "bernoulli"
    POISSON = "poisson"
    GEOMETRIC = "geometric"
    DETERMINISTIC = "deterministic"

    @property
    def code(self) -> int:
        return _FAMILY_CODES[self]


_FAMILY_CODES = {
    Family.BERNOULLI: FAM_BERNOULLI,
    Family.POISSON: FAM_POISSON,
    Family.GEOMETRIC: FAM_GEOMETRIC,
    Family.DETERMINISTIC: FAM_DETERMINISTIC,
}

# Poisson inversion underflows exp(-mean) beyond this
_MAX_POISSON_MEAN = 500.0


@dataclass(frozen=True)
class ArrivalSpec:
    """I.i.d. per-slot arrival count distribution on {0, 1, 2, ...}.

    Geometric is parameterized by its mean on support {0, 1, ...}, i.e.
    success probability ``r = 1 / (1 + mean)``.  Deterministic requires an
    integer mean.
    """

    family: Family
    mean: float

    def __post_init__(self):
        fam = self.family
        if isinstance(fam, str):
            try:
                fam = Family(fam.lower())
            except ValueError:
                raise ValueError(f"unknown arrival family {self.family!r}") from None
            object.__setattr__(self, "family", fam)
        mean = float(self.mean)
        object.__setattr__(self, "mean", mean)
        if not math.isfinite(mean) or mean < 0:
            raise ValueError(f"arrival mean must be finite and >= 0, got {mean}")
        if fam is Family.BERNOULLI and mean > 1:
            raise ValueError(f"Bernoulli mean must be <= 1, got {mean}")
        if fam is Family.DETERMINISTIC and mean != int(mean):
            raise ValueError(f"Deterministic mean must be an integer, got {mean}")
        if fam is Family.POISSON and mean > _MAX_POISSON_MEAN:
            raise ValueError(f"Poisson mean above {_MAX_POISSON_MEAN} is not supported")

    @classmethod
    def bernoulli(cls, mean):
        return cls(Family.BERNOULLI, mean)

    @classmethod
    def poisson(cls, mean):
        return cls(Family.POISSON, mean)

    @classmethod
    def geometric(cls, mean):
        return cls(Family.GEOMETRIC, mean)

    @classmethod
    def deterministic(cls, value):
        return cls(Family.DETERMINISTIC, value)

    def with_mean(self, mean) -> "ArrivalSpec":
        return ArrivalSpec(self.family, mean)

    @property
    def code(self) -> int:
        return self.family.code

    @property
    def second_moment(self) -> float:
        m = self.mean
        if self.family is Family.BERNOULLI:
            return m
        if self.family is Family.POISSON:
            return m + m * m
        if self.family is Family.GEOMETRIC:
            return m + 2 * m * m
        return m * m

    def pmf(self, tail: float = 1e-14) -> np.ndarray:
        """Probability mass on 0..K, cut where the remaining tail is below ``tail``.

        The cut mass is folded into the last entry so the vector sums to one.
        """
        m = self.mean
        if self.family is Family.BERNOULLI:
            return np.array([1.0 - m, m]) if m > 0 else np.array([1.0])
        if self.family is Family.DETERMINISTIC:
            out = np.zeros(int(m) + 1)
            out[-1] = 1.0
            return out
        probs = []
        if self.family is Family.POISSON:
            p = math.exp(-m)
            k, cdf = 0, 0.0
            # walk past the mode before testing the tail
            while True:
                probs.append(p)
                cdf += p
                if k >= m and 1.0 - cdf < tail:
                    break
                k += 1
                p *= m / k
        else:
            if m == 0:
                return np.array([1.0])
            r = 1.0 / (1.0 + m)
            p, surv = r, 1.0
            while True:
                probs.append(p)
                surv -= p
                if surv < tail:
                    break
                p *= 1.0 - r
        out = np.array(probs)
        out[-1] += max(0.0, 1.0 - out.sum())
        return out / out.sum()


def convolve_pmfs(*pmfs) -> np.ndarray:
    """Pmf of a sum of independent counts."""
    out = np.array([1.0])
    for p in pmfs:
        out = np.convolve(out, p)
    return out


# ---------------------------------------------------------------------------
# jitted primitives


@njit(cache=True, nogil=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def derive_seed(seed, index):
    """Independent master seed for replication ``index``."""
    return _mix(_mix(np.uint64(seed) + _GOLDEN) ^ (np.uint64(index) * _GOLDEN + _M2))


@njit(cache=True, nogil=True)
def uniform(seed, purpose, queue, slot, position):
    h = _mix(np.uint64(seed) + _GOLDEN)
    h = _mix(h ^ (np.uint64(purpose) * _M1))
    h = _mix(h ^ (np.uint64(queue) * _M2))
    h = _mix(h ^ (np.uint64(slot) + _GOLDEN))
    h = _mix(h ^ (np.uint64(position) * _GOLDEN))
    return float(h >> _S11) * _INV53


@njit(cache=True, nogil=True)
def draw_from_uniform(family, mean, u):
    if family == FAM_BERNOULLI:
        return 1 if u < mean else 0
    if family == FAM_DETERMINISTIC:
        return int(mean)
    if mean <= 0.0:
        return 0
    if family == FAM_POISSON:
        p = math.exp(-mean)
        cdf = p
        k = 0
        while u >= cdf:
            k += 1
            p *= mean / k
            cdf += p
            if p == 0.0 and k > mean:
                break
        return k
    # geometric on {0, 1, ...}, P(X >= k) = (1 - r)^k
    r = 1.0 / (1.0 + mean)
    return int(math.floor(math.log1p(-u) / math.log1p(-r)))


@njit(cache=True, nogil=True)
def arrival(seed, family, mean, queue, slot):
    if family == FAM_DETERMINISTIC:
        return int(mean)
    return draw_from_uniform(family, mean, uniform(seed, ARRIVAL, queue, slot, 0))


@njit(cache=True, nogil=True)
def abandon_positional(seed, queue, slot, q, gamma, offset):
    """Sum of Z_l for positions offset+1 .. offset+q."""
    if q <= 0 or gamma <= 0.0:
        return 0
    if gamma >= 1.0:
        return q
    d = 0
    for ell in range(offset + 1, offset + q + 1):
        if uniform(seed, ABANDON, queue, slot, ell) < gamma:
            d += 1
    return d


@njit(cache=True, nogil=True)
def abandon_aggregate(seed, queue, slot, q, gamma):
    """One Binomial(q, gamma) draw by inversion of a single uniform."""
    if q <= 0 or gamma <= 0.0:
        return 0
    if gamma >= 1.0:
        return q
    u = uniform(seed, ABANDON, queue, slot, 0)
    ratio = gamma / (1.0 - gamma)
    p = math.exp(q * math.log1p(-gamma))
    if p == 0.0:
        # deep-tail underflow; fall back to positional summation
        return abandon_positional(seed, queue, slot, q, gamma, 0)
    cdf = p
    k = 0
    while u >= cdf and k < q:
        p *= ratio * (q - k) / (k + 1)
        k += 1
        cdf += p
    return k


@njit(cache=True, nogil=True)
def abandon(seed, queue, slot, q, gamma, positional):
    if positional:
        return abandon_positional(seed, queue, slot, q, gamma, 0)
    return abandon_aggregate(seed, queue, slot, q, gamma)


@njit(cache=True, nogil=True)
def attempt_sequential(seed, queue, slot, max_attempts, requests, p):
    """Sequential Bernoulli(p) matching attempts.

    Stops at the first m with successes == requests or m == max_attempts.
    ``requests < 0`` means infinitely many (stop on ``max_attempts`` only).
    Returns (attempts, successes).
    """
    if requests == 0 or max_attempts <= 0:
        return 0, 0
    m = 0
    s = 0
    while m < max_attempts:
        m += 1
        if p >= 1.0 or uniform(seed, MATCH, queue, slot, m) < p:
            s += 1
            if s == requests:
                break
    return m, s


@njit(cache=True, nogil=True)
def _sample_batch(seed, family, mean, queue, slot0, n):
    out = np.empty(n, dtype=np.int64)
    for k in range(n):
        out[k] = arrival(seed, family, mean, queue, slot0 + k)
    return out


# ---------------------------------------------------------------------------
# Python surface


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


@dataclass(frozen=True)
class RandomStreams:
    """Immutable descriptor of the keyed substreams for one master seed."""

    master_seed: int

    def __post_init__(self):
        object.__setattr__(self, "master_seed", _check_seed(self.master_seed))

    @property
    def key(self) -> np.uint64:
        """Master seed typed for the jitted kernels."""
        return np.uint64(self.master_seed)

    def spawn(self, index: int) -> "RandomStreams":
        return RandomStreams(int(derive_seed(self.key, np.uint64(index))))

    def uniform(self, purpose: int, queue: int, slot: int, position: int = 0) -> float:
        return uniform(self.key, purpose, queue, slot, position)

    def abandonment_indicator(self, queue: int, slot: int, position: int, gamma: float) -> bool:
        """Z_position^(queue)(slot) ~ Bernoulli(gamma)."""
        return self.uniform(ABANDON, queue, slot, position) < gamma


def sample_arrival(spec: ArrivalSpec, streams: RandomStreams, queue: int, slot: int) -> int:
    return int(arrival(streams.key, spec.code, spec.mean, queue, slot))


def sample_arrivals(spec: ArrivalSpec, streams: RandomStreams, queue: int, n: int, slot0: int = 0) -> np.ndarray:
    """Arrival draws for slots ``slot0 .. slot0 + n - 1``."""
    return _sample_batch(streams.key, spec.code, spec.mean, queue, slot0, n)


def sample_abandonments(q, gamma, streams: RandomStreams, queue: int, slot: int, mode="positional") -> int:
    if q < 0:
        raise ValueError("queue length must be >= 0")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if mode not in ("positional", "aggregate"):
        raise ValueError(f"unknown abandonment mode {mode!r}")
    return int(abandon(streams.key, queue, slot, int(q), float(gamma), mode == "positional"))


def attempt_matchings_sequential(max_attempts, requests_available, p, streams: RandomStreams, queue: int, slot: int):
    """Run Bernoulli(p) attempts until ``requests_available`` successes or
    ``max_attempts`` attempts.  ``requests_available=None`` means unbounded."""
    req = BACKLOG if requests_available is None else int(requests_available)
    if max_attempts < 0 or (requests_available is not None and req < 0):
        raise ValueError("counts must be nonnegative")
    if req != 0 and max_attempts > 0 and p <= 0:
        raise ValueError("p must be positive when attempts are possible")
    m, s = attempt_sequential(streams.key, queue, slot, int(max_attempts), req, float(p))
    return int(m), int(s)
