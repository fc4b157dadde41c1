"""Discrete-time matching queues with abandonment: two-way, Y and W topologies."""

__version__ = "0.1.0"

from .rng import ArrivalSpec, RandomStreams
from .stats import MCConfig, ThroughputEstimate
from .two_way import TwoWayParams, stationary_solve, throughput_exact
from .y_switch import BACKLOGGED, YParams, classify_y, y_capacity
from .w_switch import Policy, WParams, classify_w, estimate_constants
from .fluid_model import FluidParams, classify_transient, solve_fluid, zero_hit_bound

__all__ = [
    "ArrivalSpec", "RandomStreams", "MCConfig", "ThroughputEstimate",
    "TwoWayParams", "stationary_solve", "throughput_exact",
    "BACKLOGGED", "YParams", "classify_y", "y_capacity",
    "Policy", "WParams", "classify_w", "estimate_constants",
    "FluidParams", "classify_transient", "solve_fluid", "zero_hit_bound",
]
