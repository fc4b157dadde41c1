import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qswitch.rng import ArrivalSpec, RandomStreams
from qswitch.stats import MCConfig, PreconditionError, ThroughputEstimate, pooled_batch_estimate
from qswitch.two_way import simulate_two_way
from qswitch.w_switch import (
    Policy,
    Region,
    ThroughputConstants,
    WParams,
    WState,
    c12_exact,
    classify_w,
    control_signal,
    estimate_constants,
    estimate_partial,
    region_grid,
    region_inequalities,
    simulate_w,
    step_w,
)
from qswitch.y_switch import BACKLOGGED, y_capacity

from tests.helpers import reference_w

B, P, D = ArrivalSpec.bernoulli, ArrivalSpec.poisson, ArrivalSpec.deterministic
POLICIES = list(Policy)


def test_control_signal_examples():
    s = RandomStreams(0)
    assert control_signal("max_weight", 5, 3, 0, s) == 0
    assert control_signal("max_weight", 3, 5, 0, s) == 1
    assert control_signal("max_weight", BACKLOGGED, 7, 0, s) == 0
    assert control_signal("max_weight", 7, BACKLOGGED, 0, s) == 1
    assert control_signal("priority1", 0, 9, 0, s) == 0
    assert control_signal("priority2", 9, 0, 0, s) == 1


def test_tie_is_fair_coin():
    s = RandomStreams(31)
    n = 10**5
    zeros = sum(control_signal(Policy.MAX_WEIGHT, 4, 4, t, s) == 0 for t in range(n))
    assert abs(zeros / n - 0.5) <= 3 * np.sqrt(0.25 / n)


def test_step_without_requests():
    params = WParams(D(0), D(0), P(0.5), P(0.7), P(0.2), 0.3, 1.0)
    _, ev = step_w(WState(0, 0, 1, 0, 2), params, "max_weight", 5, RandomStreams(2))
    assert ev.M1 == ev.M2 == ev.successes1 == ev.successes2 == 0


def test_step_priority_order():
    params = WParams(D(0), D(0), D(2), D(3), D(4), 0.5, 1.0)
    new, ev = step_w(WState(5, 5, 0, 0, 0), params, "priority1", 0, RandomStreams(1))
    assert (ev.X, ev.M1, ev.M2) == (0, 2, 1)
    assert (new.q1, new.q2, new.q3) == (0, 0, 3)
    assert (new.n1, new.n2) == (3, 4)
    new, ev = step_w(WState(5, 5, 0, 0, 0), params, "priority2", 0, RandomStreams(1))
    assert (ev.X, ev.M1, ev.M2) == (1, 0, 3)
    assert (new.q1, new.q2, new.q3) == (2, 0, 1)


@given(st.integers(0, 15), st.integers(0, 15), st.integers(0, 15), st.integers(0, 15), st.integers(0, 15),
       st.sampled_from(POLICIES), st.floats(0.05, 1), st.floats(0.05, 1), st.integers(0, 10**6))
def test_step_conservation(n1, n2, q1, q2, q3, policy, g, p, slot):
    # project onto the valid state space
    if n1 and q1 and q2:
        q1 = 0
    if n2 and q2 and q3:
        q3 = 0
    params = WParams(P(0.5), B(0.6), P(0.7), ArrivalSpec.geometric(1.1), P(0.4), g, p)
    new, ev = step_w(WState(n1, n2, q1, q2, q3), params, policy, slot, RandomStreams(slot))
    assert new.q1 == q1 - ev.D1 + ev.S1 - ev.M1
    assert new.q2 == q2 - ev.D2 + ev.S2 - ev.M1 - ev.M2
    assert new.q3 == q3 - ev.D3 + ev.S3 - ev.M2
    assert new.n1 == n1 + ev.A1 - ev.successes1
    assert new.n2 == n2 + ev.A2 - ev.successes2
    assert new.n1 * new.q1 * new.q2 == 0
    assert new.n2 * new.q2 * new.q3 == 0
    assert min(new.q1, new.q2, new.q3, new.n1, new.n2) >= 0


@given(st.integers(0, 2**63), st.sampled_from(POLICIES), st.floats(0.05, 1), st.floats(0.05, 1))
def test_state_invariants_along_paths(seed, policy, g, p):
    params = WParams(B(0.3), B(0.2), P(0.5), P(0.6), P(0.4), g, p)
    tr = simulate_w(params, policy, "normal", 2000, seed)
    assert not np.any((tr["n1"] > 0) & (tr["q1"] > 0) & (tr["q2"] > 0))
    assert not np.any((tr["n2"] > 0) & (tr["q2"] > 0) & (tr["q3"] > 0))


@pytest.mark.parametrize("policy", POLICIES)
def test_backlogged_system_is_two_way(policy, w_ref):
    tr = simulate_w(w_ref, policy, "backlog_both", 50_000, 12)
    q = simulate_two_way(w_ref.backlogged_two_way(), 50_000, RandomStreams(12))["q"]
    np.testing.assert_array_equal(tr["q1"] + tr["q3"] - tr["q2"], q)


def test_total_matchings_policy_invariant(w_ref):
    totals = [simulate_w(w_ref, pol, "backlog_both", 20_000, 4) for pol in POLICIES]
    ref = totals[0]["M1"] + totals[0]["M2"]
    for tr in totals[1:]:
        np.testing.assert_array_equal(tr["M1"] + tr["M2"], ref)


def test_backlog_modes_never_decrement():
    params = reference_w()
    for mode, col in (("backlog_1", "n1"), ("backlog_2", "n2")):
        tr = simulate_w(params, "max_weight", mode, 5000, 3)
        assert np.all(tr[col] == -1)
    tr = simulate_w(params, "max_weight", "backlog_1", 5000, 3)
    assert np.all(tr["X"] == 0)


def test_no_requests_keep_queues_empty():
    params = reference_w(0.0, 0.0)
    tr = simulate_w(params, "max_weight", "normal", 20_000, 5)
    assert np.all(tr["n1"] == 0) and np.all(tr["n2"] == 0)
    assert tr["successes1"].sum() == tr["successes2"].sum() == 0


def test_c12_half_bernoulli():
    params = WParams(B(0.1), B(0.1), B(0.5), B(0.5), B(0.5), 1.0, 1.0)
    assert c12_exact(params).value == pytest.approx(0.375, abs=1e-12)


def test_c1_of_zero_is_y_capacity(w_ref):
    mc = MCConfig(horizon=400_000, replications=4, seed=8)
    est = estimate_partial(w_ref, 1, 0.0, mc)
    cap = y_capacity(w_ref.y_reduction(1))
    assert abs(est.value - cap) < 3 * est.stderr


def test_partial_precondition(w_ref):
    with pytest.raises(PreconditionError):
        estimate_partial(w_ref, 1, 0.3, MCConfig(horizon=1000), other_lower=0.05)


@pytest.fixture(scope="module")
def ref_constants():
    return estimate_constants(reference_w(), MCConfig(horizon=300_000, replications=4, seed=1),
                              lambda2_values=(0.02, 0.04), lambda1_values=(0.1, 0.2))


def test_constant_identities(ref_constants):
    c = ref_constants
    for total in (c.c1_lower + c.c2_bar, c.c1_bar + c.c2_lower, c.c12_mc):
        assert abs(total.value - c.c12.value) <= 3 * total.stderr + 1e-12
    assert c.c1_lower.value <= c.c1_bar.value
    assert c.c2_lower.value <= c.c2_bar.value
    assert c.c1_of[0.0].value >= c.c1_bar.value
    assert c.c2_of[0.0].value >= c.c2_bar.value


def test_partials_decrease(ref_constants):
    c1 = [ref_constants.c1_of[k].value for k in sorted(ref_constants.c1_of)]
    c2 = [ref_constants.c2_of[k].value for k in sorted(ref_constants.c2_of)]
    assert c1 == sorted(c1, reverse=True)
    assert c2 == sorted(c2, reverse=True)


def _toy_constants():
    e = lambda v: ThroughputEstimate(v, 0.001)
    return ThroughputConstants(e(1.0), e(0.7), e(0.6), e(0.4), e(0.3),
                               c1_of={0.0: e(0.9), 0.3: e(0.75)}, c2_of={0.0: e(0.85), 0.4: e(0.7)})


def test_classify_examples():
    c = _toy_constants()
    assert classify_w(0.0, 0.0, c) is Region.STABLE
    assert classify_w(0.6, 0.5, c) is Region.UNSTABLE
    assert classify_w(0.5, 0.5, c) is Region.BOUNDARY
    # lambda_1 above C_1(0) with no sum violation
    assert classify_w(0.95, 0.0, c) is Region.UNSTABLE
    # C_1 undefined above the lower constant: only the sum and C_2 remain
    assert classify_w(0.3, 0.5, c) is Region.STABLE
    assert region_inequalities(0.1, 0.1, c)
    assert not region_inequalities(0.6, 0.5, c)


def test_region_grid_shape():
    c = _toy_constants()
    grid = np.linspace(0, 0.9, 19)
    cells = region_grid(c, grid, grid)
    stable = {(x.lambda1, x.lambda2) for x in cells if x.inequalities_hold}
    assert (0.0, 0.0) in stable
    assert all(a + b < 1.0 for a, b in stable)
    for lam2 in grid:
        row = [x.inequalities_hold for x in cells if x.lambda2 == lam2]
        k = sum(row)
        assert row[:k] == [True] * k


def test_max_weight_stable_rates(w_ref):
    params = reference_w(0.15, 0.12)
    runs = [simulate_w(params, "max_weight", "normal", 200_000, RandomStreams(50).spawn(r), record=False)
            for r in range(4)]
    for i, lam in enumerate(params.lambdas):
        est = pooled_batch_estimate([r["successes"][20_000:, i] for r in runs], 20)
        assert abs(est.value - lam) < 3 * est.stderr


def test_invalid_params():
    with pytest.raises(ValueError):
        WParams(B(0.1), B(0.1), B(0.5), B(0.5), B(0.5), 0.0, 1.0)
    with pytest.raises(ValueError):
        Policy.parse("round_robin")
