"""Monte Carlo estimators and the small result types shared across modules."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np


class QSwitchError(Exception):
    """Base class for package errors."""


class ConvergenceError(QSwitchError):
    """A numerical solve did not reach its tolerance."""


class TruncationError(QSwitchError):
    """A truncated state space lost too much probability mass at its boundary."""


class PreconditionError(QSwitchError, ValueError):
    """Inputs fall outside the region where the quantity is defined."""


class Method(enum.Enum):
    EXACT_TRUNCATED = "exact_truncated"
    MONTE_CARLO = "monte_carlo"


class Recurrence(enum.Enum):
    POSITIVE_RECURRENT = "PositiveRecurrent"
    TRANSIENT = "Transient"
    CRITICAL = "Critical"


@dataclass(frozen=True)
class ThroughputEstimate:
    value: float
    stderr: float = 0.0
    method: Method = Method.MONTE_CARLO

    def __post_init__(self):
        if isinstance(self.method, str):
            object.__setattr__(self, "method", Method(self.method))

    def __add__(self, other: "ThroughputEstimate") -> "ThroughputEstimate":
        se = math.hypot(self.stderr, other.stderr)
        method = self.method if self.method is other.method else Method.MONTE_CARLO
        return ThroughputEstimate(self.value + other.value, se, method)

    def scaled(self, factor: float) -> "ThroughputEstimate":
        return ThroughputEstimate(self.value * factor, self.stderr * abs(factor), self.method)

    def agrees_with(self, other: "ThroughputEstimate", nsigma: float = 3.0) -> bool:
        return abs(self.value - other.value) <= nsigma * math.hypot(self.stderr, other.stderr)


@dataclass(frozen=True)
class MCConfig:
    """Steady-state Monte Carlo settings.

    ``burn_in`` below 1 is read as a fraction of ``horizon``.
    """

    horizon: int = 200_000
    burn_in: float = 0.1
    batches: int = 20
    replications: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.horizon <= 0 or self.batches < 2 or self.replications < 1:
            raise ValueError("horizon > 0, batches >= 2 and replications >= 1 are required")
        if self.burn_slots >= self.horizon:
            raise ValueError("burn-in must be shorter than the horizon")

    @property
    def burn_slots(self) -> int:
        b = self.burn_in
        return int(round(b * self.horizon)) if b < 1 else int(b)


def batch_means(x: np.ndarray, batches: int) -> np.ndarray:
    """Means of ``batches`` contiguous, equal-length blocks (remainder dropped from the front)."""
    x = np.asarray(x, dtype=float)
    size = len(x) // batches
    if size == 0:
        raise ValueError("fewer samples than batches")
    x = x[len(x) - size * batches:]
    return x.reshape(batches, size).mean(axis=1)


def mean_and_stderr(samples) -> tuple[float, float]:
    s = np.asarray(samples, dtype=float)
    if len(s) < 2:
        return float(s.mean()), float("nan")
    return float(s.mean()), float(s.std(ddof=1) / math.sqrt(len(s)))


def pooled_batch_estimate(series_per_rep, batches: int) -> ThroughputEstimate:
    """Pool batch means from every replication into one estimate."""
    pooled = np.concatenate([batch_means(x, batches) for x in series_per_rep])
    value, se = mean_and_stderr(pooled)
    return ThroughputEstimate(value, se, Method.MONTE_CARLO)


def fan_out(fn, items, threads: int = 1) -> list:
    """Map ``fn`` over ``items``; results come back in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
