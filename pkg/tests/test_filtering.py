import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmgrw import grw
from bmgrw.errors import CovarianceBlowup, FilterDegenerate, InvalidTimestep
from bmgrw.filtering import (DriftSpec, InnovationsPath, binned_l1, conditional_expectation,
                             innovations_increment, kalman_bucy_oracle, observe_increment,
                             particle_filter_oracle, residual_resample, riccati_fixed_point,
                             run_grid_filter, step_conditional_density, write_filter_summary)
from bmgrw.numerics import Grid, expectation_position, integrate, seeded_rng
from bmgrw.schrodinger import MassSpec, gaussian_state, polar_amplitude

M1 = MassSpec((1.0,))

#: Stabilizing root of 2aP - g^2 P^2 + q = 0 for a = -1, g = 1, q = 1, solved by hand:
#: P^2 + 2P - 1 = 0  =>  P = -1 + sqrt(2).
P_INF = 0.41421356237309505


def gaussian_density(grid, mu, var):
    return np.exp(-((grid.x - mu) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)


def linear_record(A, G, x0, dt, K, seed, Q=0.0):
    """Signal dX = A X dt (+ sqrt(Q) dV) and its observation increments."""
    rng = seeded_rng(seed)
    x, dY = x0, np.empty((K, 1))
    for k in range(K):
        dY[k] = observe_increment(np.array([x]), G, dt, rng)
        x = x + A * x * dt + np.sqrt(Q * dt) * rng.standard_normal()
    return dY


# ---------------------------------------------------------------- observation / innovations


def test_observation_without_coupling_is_noise():
    dB = np.array([0.01, -0.02])
    np.testing.assert_array_equal(observe_increment([1.0, 2.0], [0.0, 0.0], 1e-3, dB=dB), dB)
    with pytest.raises(InvalidTimestep):
        observe_increment([1.0], [1.0], 0.0, seeded_rng(0))


def test_observation_mean_rate():
    rng = seeded_rng(1)
    X, G, dt, K = np.array([0.7]), np.array([2.0]), 1e-3, 10**6
    dY = observe_increment(np.broadcast_to(X, (K, 1)), G, dt, rng)
    rate = dY.mean() / dt
    assert abs(rate - 1.4) <= 3 / np.sqrt(K * dt)
    again = observe_increment(np.broadcast_to(X, (5, 1)), G, dt, seeded_rng(1))
    np.testing.assert_array_equal(again, dY[:5])


def test_innovations_examples():
    X, G, dt = np.array([0.5]), np.array([1.3]), 1e-2
    dY = observe_increment(X, G, dt, dB=np.zeros(1))
    np.testing.assert_allclose(innovations_increment(dY, X, G, dt), 0.0, atol=1e-17)
    np.testing.assert_array_equal(innovations_increment(dY, X, np.zeros(1), dt), dY)
    path = InnovationsPath(np.arange(3) * dt, np.array([[1.0], [2.0]]))
    np.testing.assert_array_equal(path.W[:, 0], [0.0, 1.0, 3.0])


# ---------------------------------------------------------------- drift


def test_drift_spec_validation_and_fields():
    g = Grid(1, 32, -4.0, 4.0)
    with pytest.raises(ValueError):
        DriftSpec("bohmian")
    with pytest.raises(ValueError):
        DriftSpec("other")
    with pytest.raises(ValueError):
        DriftSpec("custom_tabulated", table=np.full((1, 32), np.nan))
    lin = DriftSpec("linear", A=[[-2.0]])
    v, div = lin.grid_fields(g)
    np.testing.assert_allclose(v[0], -2 * g.x)
    assert np.all(div == -2.0)
    np.testing.assert_allclose(lin.at(g, np.array([[1.5]])), [[-3.0]])
    tab = DriftSpec("custom_tabulated", table=np.sin(2 * np.pi * (g.x + 4) / 8)[None])
    _, tdiv = tab.grid_fields(g)
    np.testing.assert_allclose(tdiv, 2 * np.pi / 8 * np.cos(2 * np.pi * (g.x + 4) / 8), atol=1e-10)
    with pytest.raises(ValueError):
        DriftSpec("bohmian", masses=M1).grid_fields(g)


def test_conditional_step_delegates_to_density_sde():
    g = Grid(1, 128, -8.0, 8.0)
    psi = gaussian_state(g, 0.3, 0.8, momentum=0.6)
    rho = polar_amplitude(g, psi)
    drift = DriftSpec("bohmian", masses=M1)
    m = expectation_position(g, rho)
    a = step_conditional_density(g, rho, drift, [1.0], [0.02], 1e-3, psi=psi)
    v, div = drift.grid_fields(g, psi)
    b = grw.step_density_sde(g, rho, v, [1.0], m, [0.02], 1e-3, divergence=div)
    np.testing.assert_array_equal(a, b)


def test_conditional_step_without_coupling_conserves_mass():
    g = Grid(1, 128, -8.0, 8.0)
    rho = gaussian_density(g, 0.0, 1.0)
    out = step_conditional_density(g, rho, DriftSpec("linear", A=[[-1.0]]), [0.0], [0.5], 1e-2)
    assert abs(integrate(g, out) - 1) < 1e-9


# ---------------------------------------------------------------- conditional expectation


def test_conditional_expectation_moments():
    g = Grid(1, 512, -16.0, 16.0)
    mu, var = 1.2, 0.6
    rho = gaussian_density(g, mu, var)
    assert conditional_expectation(g, rho, np.ones(g.shape)) == pytest.approx(1.0, abs=1e-12)
    assert abs(conditional_expectation(g, rho, lambda x: x) - mu) < 1e-6
    assert abs(conditional_expectation(g, rho, g.x**2) - (mu * mu + var)) < 1e-6


# ---------------------------------------------------------------- grid filter


def test_grid_filter_tracks_kalman_bucy():
    g = Grid(1, 512, -4.0, 4.0)
    dt, K = 1e-3, 2000
    dY = linear_record(-1.0, 1.0, 0.4, dt, K, seed=2)
    rho0 = gaussian_density(g, 0.0, 0.25)
    dens, dW = run_grid_filter(g, rho0, DriftSpec("linear", A=[[-1.0]]), [1.0], dY, dt)
    means, covs = kalman_bucy_oracle([[-1.0]], [1.0], [0.0], [[0.25]], dY, dt)
    m = expectation_position(g, dens)[:, 0]
    var = integrate(g, (g.x - m[:, None]) ** 2 * dens)
    P = covs[:, 0, 0]
    assert np.max(np.abs(m - means[:, 0]) / np.sqrt(P)) < 0.01
    assert np.max(np.abs(var / P - 1)) < 0.01
    # innovations close the loop with the filter's own means
    np.testing.assert_allclose(dW[:, 0], dY[:, 0] - m[:-1] * dt, rtol=0, atol=1e-15)


def test_grid_filter_moment_equation():
    # d<x> = <F> dt + Var(x) G dW up to O(dt) per step
    g = Grid(1, 512, -4.0, 4.0)
    dt, K = 1e-3, 200
    dY = linear_record(-1.0, 1.0, 0.4, dt, K, seed=3)
    dens, dW = run_grid_filter(g, gaussian_density(g, 0.0, 0.25), DriftSpec("linear", A=[[-1.0]]),
                               [1.0], dY, dt)
    m = expectation_position(g, dens)[:, 0]
    var = integrate(g, (g.x - m[:, None]) ** 2 * dens)
    predicted = -m[:-1] * dt + var[:-1] * dW[:, 0]
    resid = np.diff(m) - predicted
    assert np.max(np.abs(resid)) < 5 * dt * np.sqrt(dt) + 10 * dt * dt


# ---------------------------------------------------------------- particle filter


def test_residual_resample_counts():
    w = np.array([0.5, 0.25, 0.125, 0.125])
    idx = residual_resample(w, seeded_rng(0))
    # deterministic part is [2, 1, 0, 0]; one index is drawn from the remainder
    counts = np.bincount(idx, minlength=4)
    assert counts.sum() == 4 and counts[0] >= 2 and counts[1] >= 1
    assert np.all(np.diff(idx) >= 0)
    exact = residual_resample(np.full(8, 0.125), seeded_rng(3))
    np.testing.assert_array_equal(exact, np.arange(8))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=50).filter(lambda w: sum(w) > 0),
       st.integers(0, 2**32 - 1))
def test_residual_resample_properties(w, seed):
    w = np.asarray(w) / np.sum(w)
    N = len(w)
    idx = residual_resample(w, seeded_rng(seed))
    counts = np.bincount(idx, minlength=N)
    assert counts.sum() == N
    assert np.all(counts >= np.floor(N * w))
    assert np.all(counts <= np.floor(N * w) + (N - np.floor(N * w).sum()))


def test_particle_filter_without_coupling_keeps_prior():
    g = Grid(1, 128, -8.0, 8.0)
    prior = gaussian_density(g, 0.0, 1.0)
    dY = np.zeros((10, 1))
    _, dens, means, ess = particle_filter_oracle(g, DriftSpec("linear", A=[[0.0]]), [0.0], dY, 1e-2,
                                                 prior, 2000, seeded_rng(1))
    np.testing.assert_allclose(ess, 2000, rtol=1e-12)
    np.testing.assert_array_equal(dens[0], dens[-1])


def test_particle_filter_matches_kalman_mean():
    g = Grid(1, 256, -8.0, 8.0)
    dt, K, N = 1e-2, 100, 20000
    dY = linear_record(-1.0, 1.0, 0.8, dt, K, seed=4, Q=1.0)
    _, _, means, _ = particle_filter_oracle(g, DriftSpec("linear", A=[[-1.0]]), [1.0], dY, dt,
                                            gaussian_density(g, 0.0, 0.25), N, seeded_rng(5),
                                            output_steps=[K])
    # Euler-propagated particles without process noise solve the Q = 0 problem
    m, P = kalman_bucy_oracle([[-1.0]], [1.0], [0.0], [[0.25]], dY, dt)
    tol = 3 * np.sqrt(P[-1, 0, 0] / N) + 0.02 * np.sqrt(P[-1, 0, 0])
    assert abs(means[0, 0] - m[-1, 0]) <= tol


def test_particle_filter_guards():
    g = Grid(1, 64, -8.0, 8.0)
    prior = gaussian_density(g, 0.0, 1.0)
    with pytest.raises(ValueError):
        particle_filter_oracle(g, DriftSpec("linear", A=[[0.0]]), [1.0], np.zeros((1, 1)), 1e-2,
                               prior, 500, seeded_rng(0))
    with pytest.raises(FilterDegenerate):
        particle_filter_oracle(g, DriftSpec("linear", A=[[0.0]]), [1e3], np.full((1, 1), 1e3), 1.0,
                               prior, 1000, seeded_rng(0))


def test_pf_density_error_shrinks_with_particles():
    # L1 between particle and exact densities falls roughly like N^-1/2
    g = Grid(1, 64, -8.0, 8.0)
    prior = gaussian_density(g, 0.0, 1.0)
    dY = np.zeros((1, 1))
    errs = []
    for N in (1000, 16000):
        e = []
        for s in range(4):
            _, dens, _, _ = particle_filter_oracle(g, DriftSpec("linear", A=[[0.0]]), [0.0], dY, 1e-3,
                                                   prior, N, seeded_rng(10 + s), output_steps=[1])
            e.append(integrate(g, np.abs(dens[0] - prior)))
        errs.append(np.mean(e))
    assert 2.5 < errs[0] / errs[1] < 6.0


# ---------------------------------------------------------------- Kalman-Bucy


def test_kalman_trivial_and_fixed_points():
    m, P = kalman_bucy_oracle([[0.0]], [0.0], [0.3], [[0.5]], np.zeros((10, 1)), 1e-2)
    assert np.all(m == 0.3) and np.all(P == 0.5)
    assert riccati_fixed_point(-1.0, 1.0, 1.0) == pytest.approx(P_INF, abs=1e-15)
    assert riccati_fixed_point(1.0, 1.0, 0.0) == 2.0
    dY = np.zeros((20000, 1))
    _, P = kalman_bucy_oracle([[-1.0]], [1.0], [0.0], [[1.0]], dY, 1e-3, Q=[[1.0]])
    assert abs(P[-1, 0, 0] - P_INF) < 1e-6
    assert abs(P_INF - (np.sqrt(2) - 1)) < 1e-15


def test_kalman_two_dimensional():
    A = np.array([[-1.0, 0.5], [0.0, -2.0]])
    dY = np.zeros((10000, 2))
    _, P = kalman_bucy_oracle(A, [1.0, 1.0], [0.0, 0.0], np.eye(2), dY, 1e-3, Q=np.eye(2))
    Pf = P[-1]
    resid = A @ Pf + Pf @ A.T - Pf @ Pf + np.eye(2)
    assert np.max(np.abs(resid)) < 1e-6
    assert np.allclose(Pf, Pf.T)


def test_kalman_blowup():
    with pytest.raises(CovarianceBlowup):
        kalman_bucy_oracle([[0.0]], [1.0], [0.0], [[1.0]], np.zeros((2, 1)), 5.0)


# ---------------------------------------------------------------- helpers


def test_binned_l1():
    g = Grid(1, 64, 0.0, 1.0)
    p = np.ones(64)
    q = np.ones(64)
    q[::2], q[1::2] = 1.5, 0.5
    assert binned_l1(g, p, q, 32) == pytest.approx(0.0, abs=1e-14)
    assert binned_l1(g, p, q, 64) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        binned_l1(g, p, q, 48)


def test_filter_summary_jsonl(tmp_path):
    path = tmp_path / "fs.jsonl"
    write_filter_summary(path, [0.0, 0.1], np.array([[0.5], [0.25]]), np.array([[1.0], [0.9]]), [0.0, 0.01])
    lines = [json.loads(x) for x in open(path)]
    assert lines[1] == {"t": 0.1, "mean": [0.25], "var": [0.9], "l1_vs_psi2": 0.01}
