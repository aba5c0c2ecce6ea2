import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netfuse import NumericalError, StaleMeasurementError
from netfuse.estimator import (LocalFilter, build_augmented, filter_params, initial_state,
                               uncertainty_bound, propagate_bounds, step, update)
from netfuse.model import SensorModel, SystemModel

from conftest import plain_system, random_psd
from kalman_oracle import augmented_oracle, kalman


def simulate_plain(rng, system, sensor, T):
    x = rng.multivariate_normal(system.mu0, system.P0)
    Z = []
    for _ in range(T):
        v = rng.normal(0, np.sqrt(system.R[0, 0]), 1)
        Z.append(sensor.C @ x + sensor.G_s @ v)
        x = system.A @ x + system.G @ v
    return np.array(Z)


@pytest.mark.parametrize("seed", [11, 12, 13])
def test_kalman_equivalence(seed):
    rng = np.random.default_rng(seed)
    system, sensor = plain_system(rng)
    Z = simulate_plain(rng, system, sensor, 50)
    ref = kalman(system.A, sensor.C, system.G, sensor.G_s, system.R, system.mu0, system.P0, Z)
    state = initial_state(system, 0, 3.0)
    for t in range(50):
        state, params = step(state, sensor, system, Z[t])
        np.testing.assert_allclose(params.K, ref["K"][t], rtol=0, atol=1e-10)
        np.testing.assert_allclose(params.L, ref["L"][t], rtol=0, atol=1e-10)
        np.testing.assert_allclose(state.xf, ref["xf"][t], rtol=0, atol=1e-10)
        np.testing.assert_allclose(state.xp, ref["xp"][t], rtol=0, atol=1e-10)
        np.testing.assert_allclose(state.Theta_bar, ref["Theta"][t], rtol=0, atol=1e-10)
        np.testing.assert_allclose(state.Sigma_bar, ref["Sigma"][t], rtol=0, atol=1e-10)


def test_prediction_bound_is_riccati():
    rng = np.random.default_rng(5)
    system, sensor = plain_system(rng)
    Rs = sensor.G_s @ system.R @ sensor.G_s.T
    S = system.P0
    state = initial_state(system, 0, 3.0)
    for _ in range(30):
        state, _ = step(state, sensor, system, np.zeros(1))
        A, C, G = system.A, sensor.C, system.G
        gain = (A @ S @ C.T + G @ system.R @ sensor.G_s.T)
        S = A @ S @ A.T + G @ system.R @ G.T - gain @ np.linalg.inv(C @ S @ C.T + Rs) @ gain.T
        np.testing.assert_allclose(state.Sigma_bar, S, atol=1e-10)


def test_state_bound_without_uncertainty():
    rng = np.random.default_rng(6)
    system, sensor = plain_system(rng)
    state = initial_state(system, 0, 3.0)
    P = state.P
    for _ in range(10):
        state, _ = step(state, sensor, system, np.ones(1))
        P = system.A @ P @ system.A.T + system.G @ system.R @ system.G.T
        np.testing.assert_allclose(state.P, P, atol=1e-12)


def test_no_sensor_uncertainty_keeps_matrices(tracking3):
    sensor = dataclasses.replace(tracking3.sensors[0], E_s=np.zeros((1, 3)))
    state = initial_state(tracking3.system, 0, 3.0)
    params = filter_params(state, sensor, tracking3.system, 0, np.eye(1))
    np.testing.assert_array_equal(params.C_hat, sensor.C)
    np.testing.assert_array_equal(params.A_hat, tracking3.system.A)


def test_tracking_params_at_start(tracking3):
    state = initial_state(tracking3.system, 0, 3.0)
    for s in tracking3.sensors:
        p = filter_params(state, s, tracking3.system, 0, tracking3.disturbance_moments()[0])
        for M in (p.K, p.L, p.C_hat, p.A_hat):
            assert np.all(np.isfinite(M))
        assert np.abs(p.C_hat - s.C).max() <= 0.01 * np.abs(s.C).max()


def test_zero_innovation_and_unit_gain():
    rng = np.random.default_rng(0)
    system, sensor = plain_system(rng)
    state = initial_state(system, 0, 3.0)
    params = filter_params(state, sensor, system)
    y = params.C_hat @ state.xp
    new = update(state, params, y)
    np.testing.assert_allclose(new.xf, state.xp, atol=1e-14)
    np.testing.assert_allclose(new.xp, params.A_hat @ state.xp, atol=1e-14)
    unit = dataclasses.replace(params, K=np.eye(1), C_hat=np.eye(1))
    s1 = dataclasses.replace(state, xp=np.array([0.3]))
    assert update(s1, unit, np.array([2.5])).xf[0] == 2.5


def test_bounds_symmetric_psd(tracking3):
    f = LocalFilter(tracking3.sensors[1], tracking3.system, tracking3.disturbance_moments(), 3.0)
    rng = np.random.default_rng(2)
    mask = rng.random((1, tracking3.horizon)) < 0.6
    tr = f.run(mask, rng.standard_normal((1, tracking3.horizon, 1)))
    for M in (tr.Theta_bar, tr.Sigma_bar, tr.P):
        np.testing.assert_array_equal(M, np.swapaxes(M, -1, -2))
        assert np.linalg.eigvalsh(M).min() >= -1e-9


def test_theta_traces_settle_below_limit(tracking3):
    T = tracking3.horizon
    for s in tracking3.sensors:
        f = LocalFilter(s, tracking3.system, tracking3.disturbance_moments(), 3.0)
        tr = f.run(np.ones((1, T), dtype=bool), np.zeros((1, T, 1)))
        traces = np.trace(tr.Theta_bar[0], axis1=-2, axis2=-1)
        assert traces[100:].max() < 0.14


def test_masked_batch_matches_sequential(tracking3):
    sensor, system = tracking3.sensors[2], tracking3.system
    mom = tracking3.disturbance_moments()
    f = LocalFilter(sensor, system, mom, 3.0)
    rng = np.random.default_rng(9)
    T = 40
    mask = rng.random((3, T)) < 0.5
    Y = rng.standard_normal((3, T, 1))
    tr = f.run(mask, Y)
    for n in range(3):
        state = f.initial_state()
        for t in range(T):
            if mask[n, t]:
                for filled in f.fill(state, t):
                    state = filled
                state, _ = f.step(state, Y[n, t])
                np.testing.assert_allclose(tr.xf[n, t], state.xf, rtol=1e-10, atol=1e-12)
                np.testing.assert_allclose(tr.Theta_bar[n, t], state.Theta_bar, rtol=1e-10,
                                           atol=1e-12)
        with pytest.raises(StaleMeasurementError):
            f.fill(state, state.t)


def test_alpha_too_large_is_numerical_error(tracking3):
    big = dataclasses.replace(tracking3.system, P0=100 * np.eye(3))
    state = initial_state(big, 0, 50.0)
    with pytest.raises(NumericalError):
        filter_params(state, tracking3.sensors[0], big, 0)


def test_uncertainty_bound_uncertainty_free():
    rng = np.random.default_rng(0)
    A, X = rng.standard_normal((3, 3)), random_psd(rng, 3)
    got = uncertainty_bound(A, np.zeros((3, 2)), np.zeros((2, 3)), X, 2.0)
    np.testing.assert_allclose(got, A @ X @ A.T, atol=1e-12)


def test_uncertainty_bound_scalar():
    assert uncertainty_bound(1, 1, 1, 1, 0.5)[0, 0] == pytest.approx(4.0, abs=1e-12)
    for F in np.linspace(-1, 1, 201):
        assert (1 + F) ** 2 <= 4.0


def _random_contraction(rng, p, q):
    F = rng.standard_normal((p, q))
    return F / np.linalg.norm(F, 2) * rng.uniform(0, 1) ** 0.25


def test_uncertainty_bound_random_dominance():
    rng = np.random.default_rng(30)
    for _ in range(20):
        r, p = 3, 2
        A, H, E = rng.standard_normal((r, r)), rng.standard_normal((r, p)), rng.standard_normal((p, r))
        X = random_psd(rng, r)
        alpha = 0.5 / np.linalg.eigvalsh(E @ X @ E.T).max()
        bound = uncertainty_bound(A, H, E, X, alpha)
        for _ in range(1000):
            F = _random_contraction(rng, p, p)
            Af = A + H @ F @ E
            assert np.linalg.eigvalsh(bound - Af @ X @ Af.T).min() >= -1e-9


def test_augmented_blocks_zero_gain(tracking3):
    state = initial_state(tracking3.system, 0, 3.0)
    params = filter_params(state, tracking3.sensors[0], tracking3.system, 0, measured=False)
    aug = build_augmented(params, tracking3.sensors[0], tracking3.system)
    np.testing.assert_array_equal(aug.A_t1[:3, :3], np.eye(3))
    assert not aug.B_t1.any() and not aug.G_t1.any()
    assert aug.A_t2.shape == (6, 6) and aug.B_t2.shape == (6, 1)


def test_augmented_blocks_match_direct_propagation(tracking3):
    system, sensor = tracking3.system, tracking3.sensors[0]
    rng = np.random.default_rng(8)
    state = initial_state(system, 0, 3.0)
    params = filter_params(state, sensor, system, 0, tracking3.disturbance_moments()[0])
    aug = build_augmented(params, sensor, system)
    for _ in range(20):
        x, xp = rng.standard_normal(3), rng.standard_normal(3)
        F = np.array([[rng.uniform(-1, 1)]])
        w, v, om = rng.standard_normal(1), rng.standard_normal(1), rng.standard_normal(1)
        first, second = augmented_oracle(x, xp, F, w, v, om, params.K, params.L, params.C_hat,
                                         params.A_hat, system, sensor)
        chi = np.concatenate([x - xp, xp])
        got1 = (aug.A_t1 + aug.H_t1 @ F @ aug.E_t1) @ chi + aug.B_t1 @ w + aug.G_t1 @ v
        got2 = ((aug.A_t2 + aug.H_t2 @ F @ aug.E_t2 + np.tensordot(om, aug.A_theta_t2, axes=1))
                @ chi + aug.B_t2 @ w + aug.G_t2 @ v)
        np.testing.assert_allclose(got1, first, atol=1e-12)
        np.testing.assert_allclose(got2, second, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_uncertainty_bound_dominance_property(seed):
    rng = np.random.default_rng(seed)
    A, H, E = rng.standard_normal((2, 2)), rng.standard_normal((2, 1)), rng.standard_normal((1, 2))
    X = random_psd(rng, 2)
    alpha = 0.9 / np.linalg.eigvalsh(E @ X @ E.T).max()
    bound = uncertainty_bound(A, H, E, X, alpha)
    for F in (-1.0, 1.0, rng.uniform(-1, 1)):
        Af = A + F * H @ E
        assert np.linalg.eigvalsh(bound - Af @ X @ Af.T).min() >= -1e-9
