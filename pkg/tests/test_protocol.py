import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efhc.protocol import (DeviceState, Fleet, ScheduleSpec, StepSizeWarning, ThresholdSpec,
                           aggregate, apply_broadcast, broadcast_triggered, gamma,
                           handle_neighbor_change, normalized_error, r_guideline, sgd_step,
                           trigger_flags)


def state(w, w_hat=None, bandwidth=5000.0, neighbors=()):
    w = np.asarray(w, dtype=float)
    return DeviceState(w, w if w_hat is None else np.asarray(w_hat, dtype=float), bandwidth,
                       frozenset(neighbors))


def test_no_error_never_triggers():
    s = state([1.0, 2.0])
    assert not broadcast_triggered(s, 0, ThresholdSpec(50, 2), ScheduleSpec())


def test_trigger_worked_example():
    # LHS = (1/4)^(1/2) * ||(0.3,)*4||_2 = 0.5 * 0.6 = 0.3 >= 50 * (1/5000) * 1
    s = state([0.3] * 4, [0.0] * 4, bandwidth=5000)
    assert normalized_error(s.w - s.w_hat, 2) == pytest.approx(0.3)
    assert broadcast_triggered(s, 0, ThresholdSpec(50, 2), ScheduleSpec())


def test_trigger_boundary_uses_greater_equal():
    # r * rho * gamma(0) = 2 * (1/4) * 1 = 0.5, exactly the error
    s = state([0.5], [0.0], bandwidth=4.0)
    assert broadcast_triggered(s, 0, ThresholdSpec(2, 1), ScheduleSpec())


def test_threshold_decays_with_k():
    s = state([0.008], [0.0], bandwidth=5000)
    th, sched = ThresholdSpec(50, 2), ScheduleSpec()
    assert not broadcast_triggered(s, 0, th, sched)  # threshold 0.01
    assert broadcast_triggered(s, 3, th, sched)  # 0.01 / 2 = 0.005 <= 0.008


def test_vectorized_trigger_matches_scalar():
    rng = np.random.default_rng(0)
    th, sched = ThresholdSpec(5, 3), ScheduleSpec()
    W, W_hat = rng.standard_normal((20, 6)), rng.standard_normal((20, 6))
    bw = rng.uniform(1, 100, 20)
    v = trigger_flags(W, W_hat, 1 / bw, 7, th, sched)
    expected = [broadcast_triggered(DeviceState(W[i], W_hat[i], bw[i]), 7, th, sched)
                for i in range(20)]
    assert v.tolist() == expected


@settings(max_examples=200, deadline=None)
@given(s=st.floats(-1e3, 1e3, allow_nan=False), n=st.integers(1, 50),
       q=st.one_of(st.floats(1, 8), st.just(math.inf)))
def test_normalization_invariance(s, n, q):
    assert normalized_error(np.full(n, s), q) == pytest.approx(abs(s), rel=1e-12, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(e=st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40),
       q=st.floats(1, 10))
def test_normalized_norm_below_max_norm(e, q):
    e = np.array(e)
    assert normalized_error(e, q) <= np.abs(e).max() * (1 + 1e-12) + 1e-300


def test_apply_broadcast():
    s = state([1.0, 2.0], [0.0, 0.0], neighbors={3, 4})
    s2, msg = apply_broadcast(s, sender=1)
    np.testing.assert_array_equal(msg.w, [1.0, 2.0])
    assert msg.degree == 2 and msg.sender == 1
    np.testing.assert_array_equal(s2.w_hat, s.w)
    assert not broadcast_triggered(s2, 0, ThresholdSpec(1e-9, 2), ScheduleSpec())
    s3, _ = apply_broadcast(s2)
    np.testing.assert_array_equal(s3.w_hat, s2.w_hat)
    # the message is a copy, not a view of the state
    msg.w[0] = 99
    assert s2.w[0] == 1.0


def test_neighbor_changes():
    s = state([0.0], neighbors={1})
    s2, forced = handle_neighbor_change(s, {2}, {2}, me=0)
    assert s2.neighbors == {1} and forced == [(0, 2)]
    s3, forced = handle_neighbor_change(s, (), ())
    assert s3.neighbors == s.neighbors and forced == []
    s4, forced = handle_neighbor_change(s, [5], [1])
    assert s4.neighbors == {5} and forced == [5]


def test_aggregate():
    s = state([0.0])
    np.testing.assert_array_equal(aggregate(s, [], []).w, [0.0])
    a = aggregate(state([0.0]), [(1, np.array([2.0]))], [0.5])
    b = aggregate(state([2.0]), [(0, np.array([0.0]))], [0.5])
    assert a.w[0] == b.w[0] == 1.0
    same = state([3.0, -1.0])
    out = aggregate(same, [(1, same.w), (2, same.w)], [0.2, 0.7])
    np.testing.assert_array_equal(out.w, same.w)
    with pytest.raises(ValueError):
        aggregate(s, [(1, np.zeros(2))], [0.5])
    with pytest.raises(ValueError):
        aggregate(s, [(1, np.zeros(1))], [])


def test_sgd_step_and_schedule():
    sched = ScheduleSpec(1, 1, 0.5)
    assert sched.alpha(0) == 1.0
    assert sched.alpha(3) == 0.5
    s = state([1.0, 1.0])
    np.testing.assert_array_equal(sgd_step(s, np.zeros(2), 5, sched).w, s.w)
    np.testing.assert_allclose(sgd_step(s, np.array([1.0, -2.0]), 3, sched).w, [0.5, 2.0])


@pytest.mark.parametrize("c", [0.51, 0.75, 1.0])
def test_step_sizes_square_summable_not_summable(c):
    # p-series: sum (1+k)^-c diverges for c <= 1, sum (1+k)^-2c converges for 2c > 1
    sched = ScheduleSpec(1, 1, c)
    assert c <= 1 and 2 * c > 1
    K = np.arange(200_000)
    partial = np.cumsum(1.0 / (1 + K) ** c)
    assert partial[-1] > partial[len(K) // 10] + 1.0
    assert sched.alpha(10**6) < sched.alpha(10)


def test_schedule_validation():
    with pytest.raises(ValueError):
        ScheduleSpec(0, 1, 0.7)
    with pytest.raises(ValueError):
        ScheduleSpec(1, 0.5, 0.7)
    with pytest.raises(ValueError):
        ScheduleSpec(1, 1, 1.5)
    with pytest.warns(StepSizeWarning):
        ScheduleSpec(1, 1, 0.5)


def test_gamma():
    sched = ScheduleSpec(omega=1.0)
    assert all(gamma(k, sched) == sched.alpha(k) for k in range(50))
    sched = ScheduleSpec(a=2, b=3, c=0.8, omega=0.25)
    ratios = {round(gamma(k, sched) / sched.alpha(k), 15) for k in range(100)}
    assert ratios == {0.25}
    assert gamma(0, sched) == 0.25 * sched.alpha(0)
    const = ScheduleSpec(omega=2.0, gamma_mode="constant")
    assert const.gamma(1000) == const.gamma(0) == 2.0


def test_r_guideline():
    assert r_guideline(1, 1, 5000, 1, 1e-2) == pytest.approx(50)
    assert r_guideline(1, 1, 1, 1, 1) == 1
    assert r_guideline(0.5, 1, 5000, 20, 0.3) == pytest.approx(2 * r_guideline(0.5, 1, 5000, 10, 0.3))
    with pytest.raises(ValueError):
        r_guideline(1, 1, 5000, 0, 1)


def test_threshold_validation():
    with pytest.raises(ValueError):
        ThresholdSpec(0, 2)
    with pytest.raises(ValueError):
        ThresholdSpec(1, 0.5)


def test_device_state_invariants():
    s = DeviceState.initial([1.0, 2.0], 250.0, [1, 2])
    np.testing.assert_array_equal(s.w, s.w_hat)
    assert s.rho == 1 / 250 and s.degree == 2 and s.n == 2
    with pytest.raises(ValueError):
        DeviceState(np.zeros(2), np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        DeviceState(np.zeros(2), np.zeros(2), 0.0)


def test_fleet_roundtrip():
    states = [DeviceState.initial(np.full(3, i), 100.0 * (i + 1)) for i in range(4)]
    fleet = Fleet.from_states(states)
    assert fleet.m == 4
    np.testing.assert_allclose(fleet.rho, [1 / 100, 1 / 200, 1 / 300, 1 / 400])
    d = fleet.device(2, {1, 3})
    np.testing.assert_array_equal(d.w, [2, 2, 2])
    assert d.neighbors == {1, 3}
