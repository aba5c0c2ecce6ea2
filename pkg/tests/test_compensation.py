import numpy as np
import pytest
from hypothesis import given, strategies as st

from netfuse import DelayBoundError, StaleMeasurementError
from netfuse.compensation import compensate, compensation_factor, fill_missing
from netfuse.estimator import LocalFilter


def test_factors():
    xp = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(compensate(xp, 1, 5), xp)
    np.testing.assert_allclose(compensate(xp, 5, 5), 0.2 * xp, atol=1e-15)
    xf = np.array([9.0, 9.0, 9.0])
    np.testing.assert_array_equal(compensate(xp, 0, 5, xf=xf), xf)
    with pytest.raises(ValueError):
        compensate(xp, 0, 5)


def test_delay_outside_bound_rejected():
    with pytest.raises(DelayBoundError):
        compensation_factor(6, 5)
    with pytest.raises(DelayBoundError):
        compensation_factor(-1, 5)


@given(N=st.integers(1, 20), data=st.data())
def test_factor_range_and_monotone(N, data):
    tau = np.arange(1, N + 1)
    f = compensation_factor(tau, N)
    assert f[0] == 1.0 and f[-1] == pytest.approx(1.0 / N)
    assert np.all(np.diff(f) < 0)
    assert np.all((f > 0) & (f <= 1))


def test_fill_counts(tracking3):
    f = LocalFilter(tracking3.sensors[0], tracking3.system, tracking3.disturbance_moments(), 3.0)
    state, _ = f.step(f.initial_state(), np.array([2.0]))
    assert fill_missing(f, state, state.t + 1) == []
    filled = fill_missing(f, state, state.t + 3)
    assert [s.t for s in filled] == [state.t + 1, state.t + 2]
    # prediction-only steps carry the one-step prediction forward
    np.testing.assert_allclose(filled[0].xf, state.xp)
    with pytest.raises(StaleMeasurementError):
        fill_missing(f, state, state.t)


def test_lossless_run_never_fills(tracking3):
    from netfuse.pipeline import run_batch

    b = run_batch(tracking3, [0], channel="lossless", fuse=False)
    assert b.filled.max() == 0 and b.tau.max() == 0
    np.testing.assert_array_equal(b.x_local, b.x_raw)
