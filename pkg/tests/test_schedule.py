from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxdiff.schedule import (
    NoiseSchedule,
    linear_beta_schedule,
    repaint_plan,
    respaced_indices,
    subsample_schedule,
)
from test_acceptance import reference_transitions


def test_linear_schedule_endpoints_and_length():
    s = linear_beta_schedule(1000, 1e-4, 0.02)
    assert s.T == 1000
    assert s.beta[0] == 1e-4 and s.beta[-1] == 0.02
    assert np.all(np.diff(s.beta) > 0)
    assert s.abar(0) == 1.0
    assert s.abar(1) == 1.0 - 1e-4


def test_alpha_bar_is_cumulative_product():
    s = linear_beta_schedule(200, 1e-3, 0.05)
    np.testing.assert_allclose(s.alpha_bar, np.cumprod(1 - s.beta), rtol=1e-14)
    np.testing.assert_array_equal(s.alpha, 1 - s.beta)


def test_schedule_tables_are_read_only():
    s = linear_beta_schedule(10)
    with pytest.raises(ValueError):
        s.beta[0] = 0.5


@pytest.mark.parametrize("t", [-1, 11])
def test_abar_rejects_out_of_range(t):
    with pytest.raises(ValueError):
        linear_beta_schedule(10).abar(t)


@pytest.mark.parametrize(
    "args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)]
)
def test_linear_schedule_validation(args):
    with pytest.raises(ValueError):
        linear_beta_schedule(*args)


def test_noise_schedule_rejects_bad_beta():
    with pytest.raises(ValueError):
        NoiseSchedule(np.array([0.1, 1.2]), np.array([1, 2]))


def test_respaced_indices_stride():
    idx = respaced_indices(1000, 250)
    assert idx[0] == 4 and idx[-1] == 1000 and len(idx) == 250
    assert np.all(np.diff(idx) == 4)


def test_subsample_keeps_cumulative_values():
    base = linear_beta_schedule()
    s = subsample_schedule(base, 250)
    np.testing.assert_array_equal(s.alpha_bar, base.alpha_bar[3::4])
    assert s.source_timestep(1) == 4 and s.source_timestep(250) == 1000
    np.testing.assert_allclose(np.cumprod(1 - s.beta), s.alpha_bar, rtol=1e-12)
    assert subsample_schedule(base, 1000) is base


def test_plan_counts_for_default_settings():
    plan = repaint_plan(250, 10, 10)
    assert len(plan) == 4570
    assert plan.n_down == 2410 and plan.n_up == 2160
    jumps = plan.up_jumps()
    assert len(jumps) == 24 * 9
    assert all(b - a == 10 for a, b in jumps)
    assert plan.transitions[0] == (250, 249) and plan.transitions[-1] == (1, 0)


def test_plan_without_resampling_is_plain_descent():
    plan = repaint_plan(20, 5, 1)
    assert list(plan) == [(t, t - 1) for t in range(20, 0, -1)]


def test_tiny_plan():
    assert list(repaint_plan(2, 1, 1)) == [(2, 1), (1, 0)]


@pytest.mark.parametrize("args", [(0, 1, 1), (10, 0, 1), (10, 1, 0), (5, 6, 2)])
def test_plan_validation(args):
    with pytest.raises(ValueError):
        repaint_plan(*args)


@settings(max_examples=60, deadline=None)
@given(
    T=st.integers(1, 120),
    J=st.integers(1, 15),
    R=st.integers(1, 6),
)
def test_plan_matches_reference_enumeration(T, J, R):
    if J > T:
        return
    plan = repaint_plan(T, J, R)
    assert list(plan) == reference_transitions(T, J, R)
    # unit steps, chain stays in range, starts at T and ends at 0
    assert all(abs(a - b) == 1 and 0 <= b <= T for a, b in plan)
    assert plan.transitions[0][0] == T and plan.transitions[-1][1] == 0
    assert plan.n_down - plan.n_up == T
