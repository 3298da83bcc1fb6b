"""Particle trajectories along the guiding equation and equivariance diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidTimestep
from .numerics import (Grid, histogram_density, interpolate, l1_distance, sample_point,
                       seeded_rng)
from .schrodinger import MassSpec, velocity_field


@dataclass
class ParticleSystem:
    position: np.ndarray
    masses: MassSpec
    g: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(self.masses.dim)
        if self.g < 0:
            raise ValueError("collapse coupling g must be non-negative")

    @property
    def G(self) -> np.ndarray:
        """Diagonal of g * sqrt(M/m)."""
        return collapse_matrix(self.g, self.masses)


def collapse_matrix(g: float, masses: MassSpec) -> np.ndarray:
    """Diagonal entries g*sqrt(m_i/m)."""
    return g * np.sqrt(masses.ratios())


@dataclass
class Ensemble:
    positions: np.ndarray
    master_seed: int
    seeds: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if len(self.positions) < 1:
            raise ValueError("an ensemble needs at least one replica")

    @classmethod
    def from_density(cls, grid: Grid, rho, count: int, master_seed: int) -> "Ensemble":
        """Quantum-equilibrium initialization: replica r draws from ``seeded_rng(seed, r)``."""
        pts = np.empty((count, grid.dim))
        for r in range(count):
            pts[r] = sample_point(grid, rho, seeded_rng(master_seed, r))
        return cls(pts, master_seed, [(master_seed, r) for r in range(count)])

    def __len__(self):
        return len(self.positions)


def velocity_at(grid: Grid, velocity, X) -> np.ndarray:
    """Catmull-Rom interpolation of a velocity field at configuration points.

    ``velocity`` is ``(dim,) + grid.shape`` with ``X`` of shape ``(N, dim)``, or
    batched ``(R, dim) + grid.shape`` with ``X`` of shape ``(R, dim)``.
    """
    velocity = np.asarray(velocity)
    X = np.asarray(X, dtype=float)
    batched = velocity.ndim == grid.dim + 2
    comps = []
    for i in range(grid.dim):
        vi = np.take(velocity, i, axis=-grid.dim - 1)
        if batched:
            comps.append(interpolate(grid, vi, X[:, None, :])[:, 0])
        else:
            comps.append(interpolate(grid, vi, X.reshape(-1, grid.dim)))
    return np.stack(comps, axis=-1).reshape(X.shape)


def step_particle(grid: Grid, X, psi, masses: MassSpec, dt: float, psi_half=None) -> np.ndarray:
    """Midpoint (RK2) step of dX/dt = M^-1 grad S(X).

    The half-step velocity uses ``psi_half`` (the state at t + dt/2) when given,
    otherwise the field of ``psi`` is held frozen over the step.
    """
    if not dt > 0:
        raise InvalidTimestep(f"timestep must be positive, got {dt}")
    v0 = velocity_field(grid, psi, masses)
    v_half = v0 if psi_half is None else velocity_field(grid, psi_half, masses)
    return advance_positions(grid, X, v0, v_half, dt)


def advance_positions(grid: Grid, X, v_start, v_half, dt: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    mid = X + 0.5 * dt * velocity_at(grid, v_start, X)
    return grid.wrap(X + dt * velocity_at(grid, v_half, mid))


def propagate_ensemble(grid: Grid, positions, psi0, masses: MassSpec,
                       advance: Callable[[np.ndarray, float], np.ndarray],
                       T: float, dt: float, output_times: Sequence[float] = ()):
    """Co-propagate replicas and the shared wavefunction up to time ``T``.

    ``advance(psi, dt)`` evolves the state; it is called twice per step (two
    half steps) so the midpoint velocity sees psi(t + dt/2).

    Returns ``(times, positions, psi_T)`` where ``positions[j]`` holds all
    replicas at ``times[j]``; t = 0 is always included.
    """
    if not dt > 0:
        raise InvalidTimestep(f"timestep must be positive, got {dt}")
    steps = int(round(T / dt))
    wanted = {int(round(t / dt)) for t in output_times} | {0}
    X = np.array(positions, dtype=float, ndmin=2)
    psi = np.asarray(psi0)
    times, snaps = [], []
    for k in range(steps + 1):
        if k in wanted:
            times.append(k * dt)
            snaps.append(X.copy())
        if k == steps:
            break
        v0 = velocity_field(grid, psi, masses)
        psi_half = advance(psi, dt / 2)
        v_half = velocity_field(grid, psi_half, masses)
        X = advance_positions(grid, X, v0, v_half, dt)
        psi = advance(psi_half, dt / 2)
    return np.asarray(times), np.stack(snaps), psi


def equivariance_distance(grid: Grid, positions, rho) -> float:
    """L1 distance between the cell histogram of replica positions and ``rho``."""
    return l1_distance(grid, histogram_density(grid, positions), rho)


def sampling_floor(grid: Grid, count: int) -> float:
    """Multinomial fluctuation bound 2*sqrt(n^D / N) on the histogram L1 distance."""
    return 2.0 * np.sqrt(grid.size / count)


def write_trajectories(path, times, positions) -> None:
    """CSV with header ``t,replica,x1,...,xD``; one row per (time, replica)."""
    positions = np.asarray(positions)
    D = positions.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "replica", *[f"x{i + 1}" for i in range(D)]])
        for t, snap in zip(times, positions):
            for r, x in enumerate(snap):
                w.writerow([repr(float(t)), r, *[repr(float(v)) for v in x]])
