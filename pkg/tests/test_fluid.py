import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from qswitch.fluid_model import (
    CaseLabel,
    FluidParams,
    classify_transient,
    fluid_rates,
    merging_condition,
    solve_fluid,
    zero_hit_bound,
)
from qswitch.stats import PreconditionError

from tests.helpers import CASE1, CASE2, CASE3


@st.composite
def stable_params(draw):
    """Random constants satisfying the identity, with arrivals in the stable region."""
    c12 = draw(st.floats(0.5, 3.0))
    c1_bar = draw(st.floats(0.5 * c12, c12))
    c2_bar = draw(st.floats(0.5 * c12, c12))
    assume(c1_bar + c2_bar >= c12)
    c1_lower, c2_lower = c12 - c2_bar, c12 - c1_bar
    lam1 = draw(st.floats(0, 0.95)) * c12
    lam2 = draw(st.floats(0, 0.95)) * (c12 - lam1)
    # C_i(lambda_j) lies between the bar and c12 - lambda_j where defined
    c1_of = c1_bar + draw(st.floats(0, 1)) * max(c12 - lam2 - c1_bar, 0) if lam2 <= c2_lower else None
    c2_of = c2_bar + draw(st.floats(0, 1)) * max(c12 - lam1 - c2_bar, 0) if lam1 <= c1_lower else None
    p = FluidParams(lam1, lam2, c12, c1_bar, c2_bar, c1_lower, c2_lower, c1_of, c2_of)
    assume(p.is_stable())
    assume(min(p.partial_capacity(0) - lam1, p.partial_capacity(1) - lam2, c12 - lam1 - lam2) > 1e-3)
    return p


nonneg_pair = st.tuples(st.floats(0, 10), st.floats(0, 10)).filter(lambda n: n[0] + n[1] > 1e-3)


def test_rates_examples():
    assert fluid_rates((2, 1), CASE1) == (1.5, 0.5)
    assert fluid_rates((1, 2), CASE1) == (0.5, 1.5)
    assert fluid_rates((1, 1), CASE1) == (1.0, 1.0)
    assert fluid_rates((0, 0), CASE1) == (0.4, 0.4)
    # lambda_2 below the lower constant: partial capacity on the edge
    assert fluid_rates((1, 0), CASE1) == (1.6, 0.4)
    with pytest.raises(ValueError):
        fluid_rates((-1, 0), CASE1)


def test_edge_rates_above_lower():
    p = FluidParams.from_bars(0.3, 0.6, 2.0, 1.6, 1.5, None, None)
    assert fluid_rates((1, 0), p) == pytest.approx((1.6, 0.4), abs=1e-12)


def test_edge_equality_uses_partial_branch():
    p = FluidParams.from_bars(0.3, 0.5, 2.0, 1.5, 1.5, 1.5, None)
    assert p.lambda2 == p.c2_lower
    assert fluid_rates((1, 0), p) == (1.5, 0.5)


def test_identity_enforced():
    with pytest.raises(ValueError):
        FluidParams(0.1, 0.1, 2.0, 1.5, 1.5, 0.5, 0.4)
    with pytest.raises(ValueError):
        FluidParams(0.1, 0.1, 2.0, 1.5, 1.5, 1.6, 0.5)


@given(stable_params(), nonneg_pair)
def test_rate_consistency(params, n):
    assume(min(n) > 0)
    r1, r2 = fluid_rates(n, params)
    assert r1 + r2 == pytest.approx(params.c12, abs=1e-12)
    assert params.c1_lower - 1e-12 <= r1 <= params.c1_bar + 1e-12
    assert params.c2_lower - 1e-12 <= r2 <= params.c2_bar + 1e-12


def test_case1_path():
    path = solve_fluid((3.0, 1.0), CASE1)
    np.testing.assert_allclose(path.breakpoints, [0, 2, 10 / 3], atol=1e-12)
    np.testing.assert_allclose(path.values[1], [0.8, 0.8], atol=1e-12)
    np.testing.assert_allclose(path.slopes[0], [-1.1, -0.1], atol=1e-12)
    np.testing.assert_allclose(path.slopes[1], [-0.6, -0.6], atol=1e-12)
    assert path.absorbed
    assert path.zero_hit_time == pytest.approx(10 / 3, abs=1e-12)
    assert path.zero_hit_time <= zero_hit_bound((3.0, 1.0), CASE1)


def test_single_queue_drains_at_partial_capacity():
    path = solve_fluid((1.0, 0.0), CASE1)
    np.testing.assert_allclose(path.slopes[0], [0.4 - 1.6, 0.0], atol=1e-12)
    assert path.zero_hit_time == pytest.approx(1 / 1.2, abs=1e-12)


def test_case2_path():
    assert classify_transient(CASE2) == classify_transient(CASE2)
    assert classify_transient(CASE2).label is CaseLabel.CASE2
    path = solve_fluid((1.0, 0.4), CASE2)
    # n1 > n2: drift (-1.7, 0.7) until the queues meet at t = 0.25; the diagonal
    # rates are clipped, so n2 takes the lead with drift (-0.7, -0.3); n1 empties
    # at 0.25 + 0.575/0.7 and n2 then drains at C_2(lambda_1) - lambda_2 = 0.35
    t1 = 0.25 + 0.575 / 0.7
    t2 = t1 + (0.575 - 0.3 * 0.575 / 0.7) / 0.35
    np.testing.assert_allclose(path.breakpoints, [0, 0.25, t1, t2], atol=1e-12)
    # the queues cross without merging
    t = np.linspace(0, path.zero_hit_time, 2001)
    x = path.sample(t)
    assert np.sum(np.abs(x[:, 0] - x[:, 1]) < 1e-9) <= 3
    assert path.zero_hit_time <= zero_hit_bound((1.0, 0.4), CASE2)


def test_case3_path():
    case = classify_transient(CASE3)
    assert case.label is CaseLabel.CASE3 and case.binding_index == 1
    path = solve_fluid((1.0, 0.4), CASE3)
    # drift (-1.6, 0.5) until the queues meet at t = 0.6/2.1; then n2 leads with
    # drift (-1.2, +0.1) until n1 empties; n2 drains at C_2(lambda_1) - lambda_2 = 0.2
    t0 = 0.6 / 2.1
    meet = 1 - 1.6 * t0
    t1 = t0 + meet / 1.2
    peak = meet + 0.1 * meet / 1.2
    np.testing.assert_allclose(path.breakpoints, [0, t0, t1, t1 + peak / 0.2], atol=1e-12)
    # n2 is non-decreasing while n1 > 0, then drains
    i1 = np.argmax(path.values[:, 0] == 0)
    assert np.all(np.diff(path.values[: i1 + 1, 1]) >= -1e-12)
    assert path.values[i1, 1] == pytest.approx(peak, abs=1e-12)
    assert path.zero_hit_time <= zero_hit_bound((1.0, 0.4), CASE3)


def test_classification_examples():
    assert classify_transient(CASE1).label is CaseLabel.CASE1
    assert merging_condition(CASE1) == pytest.approx((-1.2, -2.2))
    sym = FluidParams.from_bars(0.7, 0.7, 2.0, 1.2, 1.2, 1.25, 1.25)
    assert classify_transient(sym).label is CaseLabel.CASE1
    edge = FluidParams.from_bars(0.1, 0.6, 2.0, 1.8, 0.6, None, 0.9)
    assert classify_transient(edge) == classify_transient(edge)
    assert classify_transient(edge).label is CaseLabel.CASE3
    assert classify_transient(CASE1.with_lambdas(1.2, 1.0, 0.9, 0.9)).label is CaseLabel.UNSTABLE


def test_bound_requires_stability():
    with pytest.raises(PreconditionError):
        zero_hit_bound((1, 1), CASE1.with_lambdas(1.2, 1.0, 0.9, 0.9))


def test_bound_at_zero_arrivals():
    p = CASE1.with_lambdas(0.0, 0.0, 1.9, 1.9)
    b = zero_hit_bound((1.0, 1.0), p)
    # growth term max(lambda_i - lower_i) = -0.5 enters unclipped
    assert b == pytest.approx(2 * (1 / 2 + (1 / 1.9) * (1 - 0.5 / 2)))
    assert solve_fluid((1.0, 1.0), p).zero_hit_time <= b


@given(stable_params(), nonneg_pair, st.floats(0.1, 5))
def test_bound_is_linear(params, n0, k):
    b = zero_hit_bound(n0, params)
    assert zero_hit_bound((k * n0[0], k * n0[1]), params) == pytest.approx(k * b, rel=1e-9)


@given(stable_params(), nonneg_pair)
def test_path_properties(params, n0):
    path = solve_fluid(n0, params)
    assert path.absorbed
    assert np.all(path.values >= 0)
    assert np.all(np.diff(path.breakpoints) > 0)
    # continuity: each segment ends where the next begins
    ends = path.values[:-1] + path.slopes[: len(path.values) - 1] * np.diff(path.breakpoints)[:, None]
    np.testing.assert_allclose(ends, path.values[1:], atol=1e-9 * (1 + sum(n0)))
    # coordinates that reach zero stay there (an initial zero may grow)
    for k in range(1, len(path.values) - 1):
        for i in range(2):
            if path.values[k, i] == 0:
                assert path.values[k + 1, i] == 0
    # Lipschitz bound on slopes
    cap = params.lambda1 + params.lambda2 + max(params.c12, params.partial_capacity(0), params.partial_capacity(1))
    assert np.all(np.abs(path.slopes) <= cap)
    assert path.zero_hit_time <= zero_hit_bound(n0, params) * (1 + 1e-9)


@given(stable_params(), nonneg_pair, st.floats(0, 1))
def test_suffix_uniqueness(params, n0, frac):
    path = solve_fluid(n0, params)
    t = frac * path.zero_hit_time
    again = solve_fluid(n0, params)
    np.testing.assert_array_equal(path.breakpoints, again.breakpoints)
    np.testing.assert_array_equal(path.values, again.values)
    mid = path.at(t)
    assume(mid.sum() > 1e-6)
    suffix = solve_fluid(mid, params)
    tt = np.linspace(0, path.zero_hit_time - t, 50)
    np.testing.assert_allclose(suffix.sample(tt), path.sample(t + tt), atol=1e-8 * (1 + sum(n0)))


@given(stable_params(), nonneg_pair)
def test_case1_stickiness(params, n0):
    assume(classify_transient(params).label is CaseLabel.CASE1)
    path = solve_fluid(n0, params)
    tol = 1e-9 * (1 + sum(n0))
    on_diag = [k for k, v in enumerate(path.values) if v[0] > 0 and abs(v[0] - v[1]) <= tol]
    if on_diag:
        rest = path.values[on_diag[0]:]
        np.testing.assert_allclose(rest[:, 0], rest[:, 1], atol=tol)


def test_t_end_truncates():
    path = solve_fluid((3.0, 1.0), CASE1, t_end=1.0)
    assert not path.absorbed
    assert path.t_final == 1.0
    np.testing.assert_allclose(path.at(1.0), [1.9, 0.9], atol=1e-12)
