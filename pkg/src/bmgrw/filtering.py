"""Nonlinear filtering of a hidden configuration from noisy linear observations.

Signal dX = F(X) dt, observation dY = G X dt + dB, innovations
dW = dY - G <X> dt. The conditional density evolves by the same scheme as the
GRW density equation (``grw.step_density_sde``); a bootstrap particle filter
and the Kalman-Bucy equations serve as independent checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CovarianceBlowup, FilterDegenerate, InvalidTimestep
from .grw import step_density_sde
from .numerics import (Grid, divergence, expectation_position, histogram_density,
                       integrate, interpolate, sample_point)
from .schrodinger import MassSpec, velocity_divergence, velocity_field


@dataclass
class ObservationPath:
    times: np.ndarray
    dY: np.ndarray
    G: np.ndarray


@dataclass
class InnovationsPath:
    times: np.ndarray
    dW: np.ndarray

    @property
    def W(self) -> np.ndarray:
        return np.concatenate([np.zeros((1,) + self.dW.shape[1:]), np.cumsum(self.dW, axis=0)])


@dataclass
class DriftSpec:
    """Signal drift F.

    kind ``bohmian`` uses M^-1 grad S of the wavefunction passed at evaluation
    time; ``linear`` uses F(x) = A x; ``custom_tabulated`` holds a
    ``(dim,) + grid.shape`` table.
    """

    kind: str
    masses: MassSpec | None = None
    A: np.ndarray | None = None
    table: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "bohmian" and self.masses is None:
            raise ValueError("bohmian drift needs masses")
        if self.kind == "linear":
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.kind == "custom_tabulated":
            self.table = np.asarray(self.table, dtype=float)
            if not np.all(np.isfinite(self.table)):
                raise ValueError("drift table must be finite")
        if self.kind not in ("bohmian", "linear", "custom_tabulated"):
            raise ValueError(f"unknown drift kind {self.kind!r}")

    def grid_fields(self, grid: Grid, psi=None):
        """``(velocity, divergence)`` on the grid nodes."""
        if self.kind == "bohmian":
            if psi is None:
                raise ValueError("bohmian drift needs the current wavefunction")
            return velocity_field(grid, psi, self.masses), velocity_divergence(grid, psi, self.masses)
        if self.kind == "linear":
            x = [np.broadcast_to(c, grid.shape) for c in grid.coords]
            v = np.stack([sum(self.A[i, j] * x[j] for j in range(grid.dim))
                          for i in range(grid.dim)])
            return v, np.full(grid.shape, np.trace(self.A))
        return self.table, divergence(grid, self.table)

    def at(self, grid: Grid, points, psi=None) -> np.ndarray:
        """Drift evaluated at ``(N, dim)`` points."""
        points = np.asarray(points, dtype=float)
        if self.kind == "linear":
            return points @ self.A.T
        v, _ = self.grid_fields(grid, psi)
        return np.stack([interpolate(grid, v[i], points) for i in range(grid.dim)], axis=-1)


def observe_increment(X, G, dt: float, rng: np.random.Generator | None = None, dB=None):
    """dY = G X dt + dB with dB ~ N(0, dt I) (drawn from ``rng`` unless given)."""
    if not dt > 0:
        raise InvalidTimestep(f"timestep must be positive, got {dt}")
    X = np.asarray(X, dtype=float)
    if dB is None:
        dB = rng.standard_normal(X.shape) * np.sqrt(dt)
    return np.asarray(G) * X * dt + dB


def innovations_increment(dY, x_estimate, G, dt: float):
    """dW = dY - G <X> dt."""
    return np.asarray(dY) - np.asarray(G) * np.asarray(x_estimate) * dt


def step_conditional_density(grid: Grid, rho, drift: DriftSpec, G, dW, dt: float, psi=None,
                             x_mean=None, fields=None):
    """Conditional forward equation, delegating to the shared density SDE stepper.

    ``<X>`` defaults to the mean of the pre-step ``rho``; ``psi`` supplies the
    start-of-step wavefunction for bohmian drift (keeps F previsible).
    ``fields`` may pass precomputed ``drift.grid_fields`` output.
    """
    if x_mean is None:
        x_mean = expectation_position(grid, rho)
    v, div = drift.grid_fields(grid, psi) if fields is None else fields
    return step_density_sde(grid, rho, v, G, x_mean, dW, dt, divergence=div)


def conditional_expectation(grid: Grid, rho, h) -> float:
    """Integral of h * rho over the box (h may be a grid array or a callable of the coords)."""
    values = h(*grid.coords) if callable(h) else h
    return integrate(grid, np.asarray(values) * rho)


def run_grid_filter(grid: Grid, rho0, drift: DriftSpec, G, dY, dt: float,
                    psi_path: Sequence | Callable | None = None):
    """Grid filter over a whole observation record.

    Returns ``(densities, innovations)``: densities at steps 0..K and the
    innovations increments it built along the way.
    """
    G = np.asarray(G, dtype=float)
    dY = np.asarray(dY, dtype=float)
    rho = np.asarray(rho0, dtype=float)
    out, dWs = [rho], []
    for k in range(len(dY)):
        psi = _psi_at(psi_path, k)
        m = expectation_position(grid, rho)
        dW = innovations_increment(dY[k], m, G, dt)
        rho = step_conditional_density(grid, rho, drift, G, dW, dt, psi=psi, x_mean=m)
        out.append(rho)
        dWs.append(dW)
    return np.stack(out), np.asarray(dWs)


def _psi_at(psi_path, k):
    if psi_path is None:
        return None
    return psi_path(k) if callable(psi_path) else psi_path[k]


def binned_l1(grid: Grid, p, q, bins: int) -> float:
    """L1 distance between two 1-D grid densities after merging cells into ``bins`` equal bins."""
    if grid.dim != 1 or grid.n % bins:
        raise ValueError(f"cannot merge {grid.n} cells into {bins} bins")
    P = (np.asarray(p) * grid.h).reshape(bins, -1).sum(axis=1)
    Q = (np.asarray(q) * grid.h).reshape(bins, -1).sum(axis=1)
    return float(np.abs(P - Q).sum())


def residual_resample(weights, rng: np.random.Generator) -> np.ndarray:
    """Indices after residual resampling: floor(N w) copies plus multinomial remainder."""
    w = np.asarray(weights, dtype=float)
    N = len(w)
    counts = np.floor(N * w).astype(np.int64)
    rest = N - counts.sum()
    if rest:
        resid = N * w - counts
        counts += rng.multinomial(rest, resid / resid.sum())
    return np.repeat(np.arange(N), counts)


def particle_filter_oracle(grid: Grid, drift: DriftSpec, G, dY, dt: float, prior, n_particles: int,
                           rng: np.random.Generator, psi_path=None, output_steps=None,
                           resample_threshold: float = 0.5, min_ess: float = 10.0):
    """Bootstrap particle filter: Euler-propagated particles, Gaussian likelihood weights.

    ``prior`` is a grid density sampled for the initial cloud. At each step the
    particles move under the start-of-step drift, then the weights pick up
    exp(G x . dY - |G x|^2 dt / 2). Residual resampling fires when the
    effective sample size drops below ``resample_threshold * N``.

    Returns ``(steps, densities, means, ess)`` with weighted-histogram densities
    at the requested output steps (all steps when None).
    """
    if n_particles < 1000:
        raise ValueError("particle filter oracle needs at least 1000 particles")
    G = np.asarray(G, dtype=float)
    dY = np.asarray(dY, dtype=float)
    K = len(dY)
    wanted = set(range(K + 1)) if output_steps is None else set(output_steps)
    X = sample_point(grid, prior, rng, size=n_particles)
    logw = np.zeros(n_particles)
    steps, dens, means, ess_trace = [], [], [], []

    def record(k, w):
        steps.append(k)
        dens.append(histogram_density(grid, X, weights=w))
        means.append(w @ X)

    w = np.full(n_particles, 1.0 / n_particles)
    if 0 in wanted:
        record(0, w)
    for k in range(K):
        psi = _psi_at(psi_path, k)
        X = grid.wrap(X + dt * drift.at(grid, X, psi))
        logw = logw + (G * X) @ dY[k] - 0.5 * np.sum((G * X) ** 2, axis=-1) * dt
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
        ess = 1.0 / np.sum(w**2)
        ess_trace.append(ess)
        if ess < min_ess:
            raise FilterDegenerate(f"effective sample size {ess:.1f} at step {k + 1}")
        if k + 1 in wanted:
            record(k + 1, w)
        if ess < resample_threshold * n_particles:
            X = X[residual_resample(w, rng)]
            logw = np.zeros(n_particles)
            w = np.full(n_particles, 1.0 / n_particles)
    return np.asarray(steps), np.stack(dens), np.asarray(means), np.asarray(ess_trace)


def _riccati_rhs(P, A, G, Q):
    GtG = G.T @ G
    return A @ P + P @ A.T - P @ GtG @ P + Q


def kalman_bucy_oracle(A, G, prior_mean, prior_cov, dY, dt: float, Q=None):
    """Kalman-Bucy filter for dX = A X dt (+ process noise Q), dY = G X dt + dB.

    dm = A m dt + P G^T (dY - G m dt) by Euler-Maruyama, and the Riccati
    equation dP/dt = A P + P A^T - P G^T G P + Q by RK4. Returns means of shape
    ``(K+1, D)`` and covariances ``(K+1, D, D)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    D = A.shape[0]
    G = np.asarray(G, dtype=float)
    G = np.diag(G) if G.ndim == 1 else np.atleast_2d(G)
    Q = np.zeros((D, D)) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    m = np.asarray(prior_mean, dtype=float).reshape(D)
    P = np.atleast_2d(np.asarray(prior_cov, dtype=float))
    dY = np.asarray(dY, dtype=float).reshape(-1, D)
    means, covs = [m.copy()], [P.copy()]
    for k in range(len(dY)):
        m = m + A @ m * dt + P @ G.T @ (dY[k] - G @ m * dt)
        k1 = _riccati_rhs(P, A, G, Q)
        k2 = _riccati_rhs(P + 0.5 * dt * k1, A, G, Q)
        k3 = _riccati_rhs(P + 0.5 * dt * k2, A, G, Q)
        k4 = _riccati_rhs(P + dt * k3, A, G, Q)
        P = P + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        P = 0.5 * (P + P.T)
        try:
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise CovarianceBlowup(f"covariance lost positive definiteness at step {k + 1}")
        means.append(m.copy())
        covs.append(P.copy())
    return np.stack(means), np.stack(covs)


def riccati_fixed_point(a: float, g: float, q: float = 0.0) -> float:
    """Stabilizing root of 2 a P - g^2 P^2 + q = 0, i.e. (a + sqrt(a^2 + g^2 q)) / g^2."""
    return (a + np.sqrt(a * a + g * g * q)) / (g * g)


def write_filter_summary(path, times, means, variances, l1_vs_psi2=None) -> None:
    """JSONL lines ``{"t", "mean", "var", "l1_vs_psi2"}``."""
    with open(path, "w") as fh:
        for j, t in enumerate(times):
            rec = {"t": float(t), "mean": np.atleast_1d(means[j]).tolist(),
                   "var": np.atleast_1d(variances[j]).tolist(),
                   "l1_vs_psi2": None if l1_vs_psi2 is None else float(l1_vs_psi2[j])}
            fh.write(json.dumps(rec) + "\n")
