import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from qswitch.rng import ABANDON, ArrivalSpec, RandomStreams
from qswitch.stats import PreconditionError, Recurrence
from qswitch.two_way import (
    TwoWayParams,
    TwoWayState,
    classify_one_sided,
    identity_tolerance,
    simulate_two_way,
    stationary_solve,
    step_two_way,
    throughput_exact,
    throughput_mc,
    throughput_solve,
    transition_matrix,
)

B = ArrivalSpec.bernoulli
P = ArrivalSpec.poisson
D = ArrivalSpec.deterministic


def half_half():
    return TwoWayParams(B(0.5), B(0.5), 1.0, 1.0)


def test_step_balanced_arrivals():
    st0, ev = step_two_way(TwoWayState(0), TwoWayParams(D(2), D(2), 0.0, 0.0), 0, RandomStreams(1))
    assert (ev.M, st0.q) == (2, 0)


def test_step_certain_abandonment():
    st0, ev = step_two_way(TwoWayState(3), TwoWayParams(D(0), D(0), 1.0, 0.3), 0, RandomStreams(1))
    assert (ev.D1, ev.M, st0.q) == (3, 0, 0)


def test_step_positional_enumeration():
    params = TwoWayParams(D(1), D(0), 0.0, 0.5)
    outcomes = []
    for seed in range(20_000):
        s = RandomStreams(seed)
        z = [s.uniform(ABANDON, 2, 0, pos) < 0.5 for pos in (1, 2)]
        new, ev = step_two_way(TwoWayState(-2), params, 0, s)
        assert ev.D2 == sum(z)
        assert new.q == -2 + 1 + ev.D2
        outcomes.append(tuple(z))
    # the four Z patterns are equally likely
    counts = np.array([outcomes.count(p) for p in itertools.product([False, True], repeat=2)])
    assert stats.chisquare(counts).pvalue > 0.001


@given(st.integers(-30, 30), st.sampled_from([B(0.4), P(0.9), ArrivalSpec.geometric(1.3), D(1)]),
       st.sampled_from([B(0.7), P(0.5), D(2)]), st.floats(0, 1), st.floats(0, 1), st.integers(0, 10**6))
def test_step_conservation_and_complementarity(q, a1, a2, g1, g2, slot):
    params = TwoWayParams(a1, a2, g1, g2)
    new, ev = step_two_way(TwoWayState(q), params, slot, RandomStreams(slot))
    assert new.q - q == ev.A1 - ev.A2 - ev.D1 + ev.D2
    assert min(new.q1, new.q2) == 0
    assert ev.M == min(max(q, 0) - ev.D1 + ev.A1, max(-q, 0) - ev.D2 + ev.A2)


def test_exact_half_half():
    pi = stationary_solve(half_half())
    assert pi[-1] == pytest.approx(0.25, abs=1e-12)
    assert pi[0] == pytest.approx(0.5, abs=1e-12)
    assert pi[1] == pytest.approx(0.25, abs=1e-12)
    assert pi.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
    thr1, thr2 = throughput_exact(pi, half_half())
    assert thr1 == pytest.approx(0.25, abs=1e-12)
    assert thr2 == pytest.approx(0.25, abs=1e-12)


def test_no_side1_arrivals():
    params = TwoWayParams(D(0), P(0.4), 0.3, 0.2)
    pi = stationary_solve(params)
    assert pi.probabilities[pi.support > 0].sum() < 1e-12
    assert throughput_exact(pi, params)[0] == pytest.approx(0.0, abs=1e-12)


def test_symmetric_params():
    params = TwoWayParams(P(0.6), P(0.6), 0.3, 0.3)
    pi = stationary_solve(params)
    assert pi.mean_positive == pytest.approx(pi.mean_negative, rel=1e-9)
    thr1, thr2 = throughput_exact(pi, params)
    assert thr1 == pytest.approx(thr2, abs=1e-10)


def test_transition_matrix_rows_are_distributions():
    M = transition_matrix(P(0.7).pmf(), ArrivalSpec.geometric(0.5).pmf(), 0.3, 0.1, 40)
    assert np.all(M >= 0)
    np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-12)


def test_stationary_matches_occupation_measure():
    params = TwoWayParams(P(0.3), P(0.4), 0.2, 0.2)
    pi = stationary_solve(params, q_max=200)
    q = simulate_two_way(params, 10**7, RandomStreams(77))["q"]
    emp = np.bincount(q + 200, minlength=401) / len(q)
    tv = 0.5 * np.abs(emp - pi.probabilities).sum()
    assert tv < 0.005


def test_q_max_floor_enforced():
    with pytest.raises(PreconditionError):
        stationary_solve(TwoWayParams(P(2.0), P(1.0), 0.1, 0.1), q_max=50)
    with pytest.raises(PreconditionError):
        stationary_solve(TwoWayParams(P(2.0), P(1.0), 0.0, 0.1))


@given(st.sampled_from(["bernoulli", "poisson", "geometric"]), st.sampled_from(["bernoulli", "poisson", "geometric"]),
       st.floats(0.1, 1.0), st.floats(0.1, 1.0), st.floats(0.1, 1.0), st.floats(0.1, 1.0))
def test_flow_balance_identity(f1, f2, m1, m2, g1, g2):
    params = TwoWayParams(ArrivalSpec(f1, m1), ArrivalSpec(f2, m2), g1, g2)
    pi = stationary_solve(params)
    thr1, thr2 = throughput_exact(pi, params)
    assert abs(thr1 - thr2) < identity_tolerance(pi, params)
    assert -1e-9 <= thr1 <= min(m1, m2) + 1e-9


def test_mc_half_half():
    est = throughput_mc(half_half(), 200_000, 1000, 5, seed=3)
    assert abs(est.value - 0.25) < 3 * est.stderr


def test_mc_deterministic_unit_flows():
    est = throughput_mc(TwoWayParams(D(1), D(1), 0.4, 0.9), 10_000, 1, 2, seed=1)
    assert est.value == 1.0


@pytest.mark.parametrize("params", [
    TwoWayParams(P(0.3), P(0.4), 0.2, 0.3),
    TwoWayParams(ArrivalSpec.geometric(0.8), B(0.6), 0.5, 0.1),
])
def test_mc_agrees_with_exact(params):
    exact = throughput_solve(params)
    est = throughput_mc(params, 400_000, 4000, 8, seed=9)
    assert est.agrees_with(exact)
    assert est.value <= min(params.mu1, params.mu2)


def test_mc_seed_determinism():
    params = TwoWayParams(P(0.3), P(0.4), 0.2, 0.3)
    a = throughput_mc(params, 50_000, 100, 3, seed=5)
    b = throughput_mc(params, 50_000, 100, 3, seed=5, threads=3)
    assert a == b


def test_aggregate_mode_same_law():
    params = TwoWayParams(P(0.3), P(0.4), 0.2, 0.3)
    a = throughput_mc(params, 400_000, 4000, 8, seed=9, mode="aggregate")
    assert a.agrees_with(throughput_solve(params))


def test_one_sided_classification():
    assert classify_one_sided(0.3, 0.5, 0.7) is Recurrence.POSITIVE_RECURRENT
    assert classify_one_sided(0.8, 0.4, 0.1) is Recurrence.TRANSIENT
    assert classify_one_sided(0.4, 0.4, 0.1) is Recurrence.CRITICAL


def test_one_sided_transient_drift():
    # requests never abandon, service tokens abandon with gamma
    params = TwoWayParams(B(0.8), B(0.4), 0.0, 0.1)
    q = simulate_two_way(params, 10**6, RandomStreams(21))["q"]
    assert abs(q[-1] / 10**6 - 0.4) < 0.02
