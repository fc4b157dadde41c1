"""Fluid model of the W-topology request queues under Max-Weight.

The drift ``lambda - R(n)`` is constant inside each region (which queue is
larger, which is empty), so the fluid path is piecewise linear and can be
integrated exactly by jumping from one region change to the next.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .stats import ConvergenceError, PreconditionError

IDENTITY_TOL = 1e-9
MAX_EVENTS = 10_000


@dataclass(frozen=True)
class FluidParams:
    """Arrival rates and capacity constants as consumed by the fluid rates.

    ``c1_of_lambda2`` is C_1 at the given ``lambda2``; it is only needed when
    ``lambda2 <= c2_lower`` and may be None otherwise (likewise for C_2).
    """

    lambda1: float
    lambda2: float
    c12: float
    c1_bar: float
    c2_bar: float
    c1_lower: float
    c2_lower: float
    c1_of_lambda2: float | None = None
    c2_of_lambda1: float | None = None

    def __post_init__(self):
        vals = [self.lambda1, self.lambda2, self.c12, self.c1_bar, self.c2_bar, self.c1_lower, self.c2_lower]
        vals += [v for v in (self.c1_of_lambda2, self.c2_of_lambda1) if v is not None]
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError("fluid parameters must be finite and nonnegative")
        if self.c1_lower > self.c1_bar + IDENTITY_TOL or self.c2_lower > self.c2_bar + IDENTITY_TOL:
            raise ValueError("lower constants must not exceed the bars")
        if (abs(self.c1_lower + self.c2_bar - self.c12) > IDENTITY_TOL
                or abs(self.c1_bar + self.c2_lower - self.c12) > IDENTITY_TOL):
            raise ValueError("constants violate c1_lower + c2_bar = c12 = c1_bar + c2_lower")

    @classmethod
    def from_bars(cls, lambda1, lambda2, c12, c1_bar, c2_bar, c1_of_lambda2=None, c2_of_lambda1=None):
        """Build with the lower constants implied by the total-throughput identity."""
        return cls(lambda1, lambda2, c12, c1_bar, c2_bar, c12 - c2_bar, c12 - c1_bar, c1_of_lambda2, c2_of_lambda1)

    @classmethod
    def from_constants(cls, constants, lambda1: float, lambda2: float) -> "FluidParams":
        """From estimated :class:`~qswitch.w_switch.ThroughputConstants`.

        Point estimates of the bars are used and the lower constants are
        recomputed from the exact ``c12`` so the identity holds exactly.  Where
        the partially backlogged estimate is undefined, ``c12 - lambda_j`` is
        used, which makes the sum the binding constraint.
        """
        c12 = constants.c12.value
        c1 = constants.c1_at(lambda2)
        c2 = constants.c2_at(lambda1)
        return cls.from_bars(
            lambda1, lambda2, c12, constants.c1_bar.value, constants.c2_bar.value,
            c12 - lambda2 if c1 is None else c1.value, c12 - lambda1 if c2 is None else c2.value,
        )

    @property
    def lambdas(self) -> tuple[float, float]:
        return self.lambda1, self.lambda2

    @property
    def bars(self) -> tuple[float, float]:
        return self.c1_bar, self.c2_bar

    @property
    def lowers(self) -> tuple[float, float]:
        return self.c1_lower, self.c2_lower

    def with_lambdas(self, lambda1, lambda2, c1_of_lambda2=None, c2_of_lambda1=None) -> "FluidParams":
        return FluidParams(lambda1, lambda2, self.c12, self.c1_bar, self.c2_bar, self.c1_lower, self.c2_lower,
                           c1_of_lambda2, c2_of_lambda1)

    def partial_capacity(self, i: int, strict: bool = True) -> float:
        """C_i(lambda_j) for queue ``i`` in {0, 1}.

        Where lambda_j is at or above the lower constant of ``j`` the
        partially backlogged system is unstable; there C_{1,2} - lambda_j is
        returned, which equals the bar of ``i`` at the threshold.  With
        ``strict`` a missing estimate below the threshold is an error.
        """
        lam_j = self.lambdas[1 - i]
        given = self.c1_of_lambda2 if i == 0 else self.c2_of_lambda1
        if lam_j >= self.lowers[1 - i]:
            return self.c12 - lam_j if given is None else given
        if given is None:
            if strict:
                raise PreconditionError(f"C_{i + 1}(lambda_{2 - i}) is needed but was not given")
            return self.c12 - lam_j
        return given

    def is_stable(self) -> bool:
        return (self.lambda1 + self.lambda2 < self.c12
                and self.lambda1 < self.partial_capacity(0)
                and self.lambda2 < self.partial_capacity(1))


def _diagonal_rates(params: FluidParams) -> tuple[float, float]:
    lam1, lam2 = params.lambdas
    r1 = min(max((params.c12 + lam1 - lam2) / 2, params.c1_lower), params.c1_bar)
    r2 = min(max((params.c12 + lam2 - lam1) / 2, params.c2_lower), params.c2_bar)
    return r1, r2


def _edge_rates(i: int, params: FluidParams) -> tuple[float, float]:
    """Rates when queue ``i`` is positive and the other queue ``j`` is empty."""
    j = 1 - i
    lam_j = params.lambdas[j]
    out = [0.0, 0.0]
    if lam_j > params.lowers[j]:
        out[i], out[j] = params.bars[i], params.lowers[j]
    else:
        out[i], out[j] = params.partial_capacity(i), lam_j
    return out[0], out[1]


def _ordered_rates(i: int, params: FluidParams) -> tuple[float, float]:
    """Rates when queue ``i`` is strictly the larger and both are positive."""
    out = [0.0, 0.0]
    out[i], out[1 - i] = params.bars[i], params.lowers[1 - i]
    return out[0], out[1]


def fluid_rates(n, params: FluidParams, tol: float = 0.0) -> tuple[float, float]:
    """Service rates ``(R_1, R_2)`` at fluid state ``n``."""
    n1, n2 = float(n[0]), float(n[1])
    if n1 < 0 or n2 < 0:
        raise ValueError("fluid state must be nonnegative")
    z1, z2 = n1 <= tol, n2 <= tol
    if z1 and z2:
        return params.lambda1, params.lambda2
    if z1 or z2:
        return _edge_rates(0 if z2 else 1, params)
    if abs(n1 - n2) <= tol:
        return _diagonal_rates(params)
    return _ordered_rates(0 if n1 > n2 else 1, params)


@dataclass(frozen=True)
class FluidPath:
    """Piecewise-linear fluid trajectory.

    ``values[k]`` is the state at ``breakpoints[k]`` and ``slopes[k]`` the drift
    on ``[breakpoints[k], breakpoints[k+1]]``.  When ``absorbed`` the path sits
    at the origin from the last breakpoint on.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    absorbed: bool

    @property
    def zero_hit_time(self) -> float | None:
        return float(self.breakpoints[-1]) if self.absorbed else None

    @property
    def t_final(self) -> float:
        return float(self.breakpoints[-1])

    def at(self, t: float) -> np.ndarray:
        return self.sample(np.array([t]))[0]

    def sample(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if np.any(times < 0):
            raise ValueError("times must be nonnegative")
        if not self.absorbed and np.any(times > self.t_final * (1 + 1e-12)):
            raise ValueError("path was not integrated that far")
        if len(self.slopes) == 0:
            return np.repeat(self.values[:1], len(times), axis=0)
        k = np.clip(np.searchsorted(self.breakpoints, times, side="right") - 1, 0, len(self.slopes) - 1)
        dt = np.minimum(times, self.t_final) - self.breakpoints[k]
        out = self.values[k] + self.slopes[k] * dt[:, None]
        out[times >= self.t_final] = self.values[-1]
        return np.maximum(out, 0.0)

    def rows(self):
        """(t, n1, n2, slope1, slope2) per breakpoint; the last slope is 0 when absorbed."""
        for k, t in enumerate(self.breakpoints):
            s = self.slopes[k] if k < len(self.slopes) else (0.0, 0.0)
            yield float(t), float(self.values[k, 0]), float(self.values[k, 1]), float(s[0]), float(s[1])


def _segment(n, params: FluidParams, tol: float):
    """Drift on the next segment plus the candidate events as (dt, snap) pairs.

    ``snap`` is applied to the state when the event fires: ("zero", i),
    ("cross", None) or ("origin", None).
    """
    lam = params.lambdas
    n1, n2 = n
    z = (n1 <= tol, n2 <= tol)
    if z[0] and z[1]:
        return None, []
    if not z[0] and not z[1] and abs(n1 - n2) <= tol:
        r = _diagonal_rates(params)
        d = (lam[0] - r[0], lam[1] - r[1])
        if math.isclose(d[0], d[1], rel_tol=0, abs_tol=1e-15 * (1 + abs(d[0]))):
            m = 0.5 * (d[0] + d[1])
            events = [(n1 / -m, ("origin", None))] if m < 0 else []
            return (m, m), events
        big = 0 if d[0] > d[1] else 1
    elif z[0] or z[1]:
        big = 0 if z[1] else 1
    else:
        big = 0 if n1 > n2 else 1
    small = 1 - big
    if z[small]:
        r = _edge_rates(big, params)
    else:
        r = _ordered_rates(big, params)
    d = (lam[0] - r[0], lam[1] - r[1])
    events = []
    if d[small] < 0 and not z[small]:
        events.append((n[small] / -d[small], ("zero", small)))
    if d[big] < 0:
        events.append((n[big] / -d[big], ("zero", big)))
    if d[small] > d[big]:
        events.append(((n[big] - n[small]) / (d[small] - d[big]), ("cross", None)))
    return d, events


def solve_fluid(n0, params: FluidParams, t_end: float | None = None) -> FluidPath:
    """Exact fluid path from ``n0`` up to absorption at the origin or ``t_end``.

    Without ``t_end`` the path must reach the origin, otherwise
    :class:`ConvergenceError` is raised.
    """
    n = np.array([float(n0[0]), float(n0[1])])
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ValueError("initial state must be finite and nonnegative")
    if n.sum() <= 0:
        raise ValueError("initial state must be nonzero")
    horizon = math.inf if t_end is None else float(t_end)
    t = 0.0
    times, values, slopes = [0.0], [n.copy()], []
    absorbed = False
    for _ in range(MAX_EVENTS):
        tol = 1e-12 * (1 + n.sum())
        d, events = _segment(n, params, tol)
        if d is None:
            absorbed = True
            break
        if t >= horizon:
            break
        d = np.asarray(d, dtype=float)
        events = [(max(dt, 0.0), snap) for dt, snap in events]
        if events:
            dt_min = min(e[0] for e in events)
        else:
            dt_min = math.inf
        if t + dt_min > horizon:
            dt, fired = horizon - t, []
        elif math.isinf(dt_min):
            raise ConvergenceError("fluid path never reaches the origin; give t_end")
        else:
            dt = dt_min
            fired = [snap for e_dt, snap in events if e_dt <= dt_min + 1e-12 * (1 + dt_min)]
        n = np.maximum(n + d * dt, 0.0)
        for kind, idx in fired:
            if kind == "origin":
                n[:] = 0.0
            elif kind == "zero":
                n[idx] = 0.0
            else:
                n[:] = n.mean()
        if np.all(n <= 1e-12 * (1 + n.sum())):
            n[:] = 0.0
        t = t + dt
        times.append(t)
        values.append(n.copy())
        slopes.append(d)
    else:
        raise ConvergenceError(f"more than {MAX_EVENTS} fluid events; inconsistent parameters")
    return FluidPath(np.array(times), np.array(values), np.array(slopes).reshape(-1, 2), absorbed)


def zero_hit_bound(n0, params: FluidParams) -> float:
    """Upper bound on the time the fluid path from ``n0`` needs to reach 0.

    It is linear in ``||n0||_1``: the total drops at rate at least
    ``C_{1,2} - lambda_1 - lambda_2`` until one queue empties, and the other
    then drains at rate at least ``min_i (C_i(lambda_j) - lambda_i)``.
    """
    lam1, lam2 = params.lambdas
    slack = params.c12 - lam1 - lam2
    partial = min(params.partial_capacity(0) - lam1, params.partial_capacity(1) - lam2)
    if slack <= 0 or partial <= 0:
        raise PreconditionError("arrival rates are outside the stability region")
    growth = max(lam1 - params.c1_lower, lam2 - params.c2_lower)
    norm = abs(float(n0[0])) + abs(float(n0[1]))
    return norm * (1.0 / slack + (1.0 / partial) * (1.0 + growth / slack))


class CaseLabel(enum.Enum):
    CASE1 = "Case1"
    CASE2 = "Case2"
    CASE3 = "Case3"
    UNSTABLE = "UnstableRegion"


@dataclass(frozen=True)
class TransientCase:
    label: CaseLabel
    binding_index: int | None = None  # 0-based queue whose drift breaks the merging condition


def merging_condition(params: FluidParams) -> tuple[float, float]:
    """Both sides of the condition under which the two queues merge and drain together."""
    lhs = params.lambda1 + params.lambda2 - params.c12
    rhs = 2 * max(params.lambda1 - params.c1_bar, params.lambda2 - params.c2_bar)
    return lhs, rhs


def classify_transient(params: FluidParams) -> TransientCase:
    if not params.is_stable():
        return TransientCase(CaseLabel.UNSTABLE)
    lhs, rhs = merging_condition(params)
    if lhs >= rhs:
        return TransientCase(CaseLabel.CASE1)
    excess = (params.lambda1 - params.c1_bar, params.lambda2 - params.c2_bar)
    i = 0 if excess[0] >= excess[1] else 1
    return TransientCase(CaseLabel.CASE2 if excess[i] < 0 else CaseLabel.CASE3, i)
