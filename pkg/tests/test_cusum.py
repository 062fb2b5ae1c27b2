import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qcdlab.cusum import CostSpec, cusum_update, pathwise_loss, run_detector, run_increments

incs = st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=60)


@pytest.mark.parametrize("xi,f,out", [(0, -1, 0), (2.0, 0.5, 2.5), (0.3, -0.7, 0)])
def test_update(xi, f, out):
    assert cusum_update(xi, f) == out


def test_constant_increments_stop_at_three():
    assert run_increments(np.ones(10), 2.5).tau_s == 3


def test_tiny_threshold_stops_at_one():
    st_ = run_increments(np.ones(5), 1e-9)
    assert st_.stopped and st_.tau_s == 1


def test_negative_stream_never_stops():
    st_ = run_increments(-np.ones(100), 0.5)
    assert not st_.stopped and st_.tau_s is None and st_.xi == 0.0 and st_.n == 100


def test_first_observation_is_ignored():
    # Y_0 = 5 would cross at once if it entered the statistic
    st_ = run_detector(np.array([5.0, 0.1, 0.1]), lambda y: y, 1.0)
    assert not st_.stopped


def test_invalid_threshold():
    with pytest.raises(ValueError):
        run_increments([1.0], 0.0)
    with pytest.raises(ValueError):
        CostSpec(0.0)


@pytest.mark.parametrize("ts,ta,out", [(12, 10, 2), (8, 10, 10), (10, 10, 0)])
def test_pathwise_loss(ts, ta, out):
    assert pathwise_loss(ts, ta, 5) == out


def _brute(f, H):
    xi = 0.0
    for n, x in enumerate(f, start=1):
        xi = max(0.0, xi + x)
        if xi >= H:
            return n
    return None


@given(incs, st.floats(0.1, 5))
def test_matches_brute_force_and_stays_nonnegative(f, H):
    state = run_increments(f, H)
    assert state.tau_s == _brute(f, H)
    assert state.xi >= 0


@given(incs, st.floats(0.1, 4), st.floats(0.0, 3))
def test_raising_threshold_never_stops_earlier(f, H, dH):
    a = run_increments(f, H).tau_s
    b = run_increments(f, H + dH).tau_s
    inf = float("inf")
    assert (inf if b is None else b) >= (inf if a is None else a)


@given(incs, st.floats(0.1, 4), st.sampled_from([0.5, 2.0, 4.0, 0.25]))
def test_scale_equivariance(f, H, k):
    # powers of two keep the float arithmetic exact
    assert run_increments(k * np.asarray(f), k * H).tau_s == run_increments(f, H).tau_s


@given(incs, st.floats(0.1, 5))
def test_crossing_is_first(f, H):
    state = run_increments(f, H)
    xi, path = 0.0, []
    for x in f:
        xi = max(0.0, xi + x)
        path.append(xi)
    if state.stopped:
        assert path[state.tau_s - 1] >= H
        assert all(p < H for p in path[: state.tau_s - 1])
