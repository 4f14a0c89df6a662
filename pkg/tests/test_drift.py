import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from usdlab.core import Configuration, expected_delta_drift, expected_opinion_drift
from usdlab.drift import (
    DriftTheoremInputs,
    WalkParams,
    bernstein_tail,
    coupled_step,
    delta_step,
    hitting_bound,
    hitting_time_monte_carlo,
    hitting_window,
    hypothesis_satisfied,
    hypothesis_threshold,
    jump_condition_table,
    oliveto_witt_check,
    one_step_moves,
    opinion_step,
    run_coupled,
    schedule_from_configs,
    step_probabilities,
    step_walk,
    undecided_band_inputs,
    walk_scale,
)
from usdlab.errors import InvalidWalkParamsError


@st.composite
def coupled_pq(draw):
    p = draw(st.floats(0.0, 1.0))
    q_max = draw(st.floats(0.0, p))
    q = draw(st.floats(-p, q_max))
    return p, q, q_max


# ---------------------------------------------------------------------------
# steps


def test_step_probabilities():
    assert step_probabilities(0.5, 0.25) == (0.5, 0.375, 0.125)
    for p, q in ((0.5, 0.6), (1.2, 0.1), (-0.1, 0.0), (0.5, -0.6)):
        with pytest.raises(InvalidWalkParamsError):
            step_probabilities(p, q)


def test_deterministic_walks():
    rng = np.random.default_rng(0)
    y = 0
    for _ in range(50):
        y = step_walk(y, 1.0, 1.0, rng)
    assert y == 50
    assert all(step_walk(3, 0.0, 0.0, rng) == 3 for _ in range(50))
    assert all(step_walk(0, 1.0, -1.0, rng) == -1 for _ in range(50))


def test_step_walk_moments():
    rng = np.random.default_rng(1)
    p, q, m = 0.6, 0.2, 200_000
    d = np.array([step_walk(0, p, q, rng) for _ in range(m)])
    assert abs(d.mean() - q) <= 3 * math.sqrt((p - q * q) / m)


@settings(max_examples=100, deadline=None)
@given(coupled_pq(), st.floats(0.0, 1.0, exclude_max=True))
def test_coupling_dominates_every_draw(pq, r):
    from usdlab.drift import _moves
    p, q, q_max = pq
    dy, dyt = _moves(np.array([r]), p, q, q_max)
    assert dyt[0] >= dy[0]


@pytest.mark.parametrize("p,q,q_max", [(0.5, 0.1, 0.3), (0.9, -0.2, 0.5), (0.3, 0.3, 0.3)])
def test_coupling_marginals(p, q, q_max):
    rng = np.random.default_rng(2)
    m = 400_000
    ty, tyt, free = one_step_moves(p, q, q_max, m, rng)
    for tally, qq in ((ty, q), (tyt, q_max), (free, q)):
        _, up, down = step_probabilities(p, qq)
        for count, prob in ((tally[2], up), (tally[0], down), (tally[1], 1 - p)):
            assert abs(count - m * prob) <= 3.5 * math.sqrt(m * prob * (1 - prob)) + 1e-9


def test_coupled_step_rejects_bad_bound():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidWalkParamsError):
        coupled_step(0, 0, 0.5, 0.4, 0.3, rng)
    with pytest.raises(InvalidWalkParamsError):
        coupled_step(0, 0, 0.5, 0.1, 0.7, rng)


def test_run_coupled_randomized_schedule():
    rng = np.random.default_rng(3)
    sched_rng = np.random.default_rng(4)
    ps = sched_rng.uniform(0.4, 1.0, size=500)
    qs = ps * sched_rng.uniform(-1, 0.4, size=500)
    params = WalkParams(lambda t: ps[t], lambda t: qs[t], 1.0, 0.4, 500)
    run = run_coupled(params, 500, 2000, rng)
    assert run.violations == 0 and run.min_gap == 0
    assert np.all(run.y_tilde >= run.y)


def test_walk_params_validation():
    with pytest.raises(InvalidWalkParamsError):
        WalkParams.constant(0.5, 0.0, 10)
    with pytest.raises(InvalidWalkParamsError):
        WalkParams.constant(0.0, 0.1, 10)
    bad = WalkParams(lambda t: 0.5, lambda t: 0.1 * t, 0.5, 0.3, 10)
    bad.validate(3)
    with pytest.raises(InvalidWalkParamsError):
        bad.validate()


# ---------------------------------------------------------------------------
# bounds


def test_bernstein_examples():
    # t^2/2 = 18, denominator 2
    assert bernstein_tail(6.0, 1.0, 0.5) == pytest.approx(math.exp(-9))
    assert bernstein_tail(1.0, 0.0, 3.0) == pytest.approx(math.exp(-0.5))
    for args in ((0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, 0.0)):
        with pytest.raises(ValueError):
            bernstein_tail(*args)


@settings(max_examples=100)
@given(st.floats(0.1, 100), st.floats(0.1, 100), st.floats(0, 100), st.floats(0.1, 10))
def test_bernstein_monotone(t1, t2, v, m):
    lo, hi = sorted((t1, t2))
    assert bernstein_tail(hi, v, m) <= bernstein_tail(lo, v, m) + 1e-15
    assert 0 <= bernstein_tail(lo, v, m) <= 1


@settings(max_examples=100)
@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(1, 1e4))
def test_hitting_bound_is_weaker_than_exact_bernstein(p, frac, T):
    """The closed form keeps a variance term above the exact Bernstein one."""
    q = p * frac
    window = T / (2 * q)
    sum_var = window * (p - q * q)
    exact = bernstein_tail(T / 2, sum_var, 1 + q)
    assert hitting_bound(p, q, T) >= exact * (1 - 1e-12)


def test_hypothesis_threshold():
    assert walk_scale(0.5, 0.25) == pytest.approx(0.4375 / 0.5 + 2 / 3)
    thr = hypothesis_threshold(0.5, 0.25, 1000)
    assert thr == pytest.approx(32 * (0.875 + 2 / 3) * math.log(1000))
    assert hypothesis_satisfied(0.5, 0.25, math.ceil(thr), 1000)
    assert not hypothesis_satisfied(0.5, 0.25, math.floor(thr), 1000)
    assert hypothesis_threshold(0.5, 0.25, 1024, "two") == pytest.approx(32 * (0.875 + 2 / 3) * 10)
    assert hitting_bound(0.5, 0.25, thr) == pytest.approx(1000 ** -4)
    assert hitting_window(100, 0.25, 10**6) == 200
    assert hitting_window(100, 0.25, 50) == 50


def test_hitting_monte_carlo_trivial():
    rng = np.random.default_rng(0)
    rep = hitting_time_monte_carlo(WalkParams.constant(1.0, 1.0, 10**4), 10, 100, rng)
    assert rep.steps == 5 and rep.hits == 0 and rep.sigma == 0
    rep = hitting_time_monte_carlo(WalkParams.constant(1.0, 1.0, 10**4), 10, 100, rng, chunk=7)
    assert rep.fraction == 0
    with pytest.raises(ValueError):
        hitting_time_monte_carlo(WalkParams.constant(1.0, 1.0, 10), 0, 10, rng)


# ---------------------------------------------------------------------------
# drift theorem


@pytest.mark.parametrize("n", [10**4, 10**6])
def test_band_instantiation(n):
    inputs = undecided_band_inputs(n)
    check = oliveto_witt_check(inputs)
    assert check.condition_iii
    assert check.exponent == pytest.approx(-4 * math.log(n))
    assert check.bound == pytest.approx(n ** -4.0)
    assert inputs.ell == pytest.approx(2640 * math.sqrt(n * math.log(n)))


@settings(max_examples=100)
@given(st.floats(0.01, 10), st.floats(1, 1e4), st.floats(1, 10), st.floats(1.01, 3))
def test_drift_bound_monotone(eps, ell, r, factor):
    base = oliveto_witt_check(DriftTheoremInputs(0, ell, eps, r)).bound
    assert oliveto_witt_check(DriftTheoremInputs(0, ell * factor, eps, r)).bound <= base
    assert oliveto_witt_check(DriftTheoremInputs(0, ell, eps, r * factor)).bound >= base


def test_condition_iii_failures():
    small = oliveto_witt_check(DriftTheoremInputs(0, 10, 0.01, 2))
    assert small.lower_ok and not small.upper_ok
    # r/eps <= 1 makes the log non-positive
    assert not oliveto_witt_check(DriftTheoremInputs(0, 10, 2.0, 1.5)).upper_ok
    with pytest.raises(ValueError):
        DriftTheoremInputs(0, 10, 0.1, 0.5)
    with pytest.raises(ValueError):
        DriftTheoremInputs(5, 5, 0.1, 2)


def test_jump_condition_table():
    rows = jump_condition_table([-1, 0, 1, 2, 0, 0], math.sqrt(5), jmax=3)
    assert rows[0] == (0, 1.0, 1.0, True)
    assert rows[1][1] == 0.0 and all(ok for *_, ok in rows)
    assert not jump_condition_table([10, 10], 1.0, jmax=2)[1][3]
    with pytest.raises(ValueError):
        jump_condition_table([], 1.0)


# ---------------------------------------------------------------------------
# USD schedules


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(4, 40), st.data())
def test_usd_steps_match_drifts(k, n, data):
    cuts = sorted(data.draw(st.lists(st.integers(0, n), min_size=k, max_size=k)))
    parts = [b - a for a, b in zip([0] + cuts, cuts + [n])]
    c = Configuration(tuple(parts[:k]), parts[k])
    i, j = data.draw(st.permutations(range(1, k + 1)))[:2]
    p, q = opinion_step(c, i)
    d = expected_opinion_drift(c, i)
    assert q == pytest.approx(d.mean, abs=1e-12) and p == pytest.approx(d.p_up + d.p_down, abs=1e-12)
    p, q = delta_step(c, i, j)
    d = expected_delta_drift(c, i, j)
    assert q == pytest.approx(d.mean, abs=1e-12) and p == pytest.approx(d.p_up + d.p_down, abs=1e-12)
    assert abs(q) <= p <= 1


def test_schedule_from_configs():
    cs = [Configuration((4, 2), 4), Configuration((3, 1), 6)]
    params = schedule_from_configs([0, 5], cs, lambda c: opinion_step(c, 1))
    assert params.at(3) == opinion_step(cs[0], 1)
    assert params.at(5) == opinion_step(cs[1], 1)
    assert params.horizon == 6
    with pytest.raises(ValueError):
        schedule_from_configs([3, 3], cs, lambda c: opinion_step(c, 1))
