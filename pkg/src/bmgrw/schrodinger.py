"""Unitary evolution and the Bohmian velocity field.

Units: hbar = 1 and reference mass m = 1, so H = -sum_i (1/2 m_i) d_i^2 + V.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidTimestep
from .numerics import Grid, check_finite, integrate, partial_derivative

log = logging.getLogger(__name__)

#: Relative threshold below which |psi|^2 counts as a node (velocity set to 0).
NODE_EPS = 1e-12


@dataclass(frozen=True)
class MassSpec:
    masses: tuple[float, ...]
    reference_mass: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        if not self.masses or any(not m > 0 for m in self.masses):
            raise ValueError(f"masses must be positive, got {self.masses}")
        if not self.reference_mass > 0:
            raise ValueError("reference mass must be positive")

    @classmethod
    def uniform(cls, dim: int, mass: float = 1.0) -> "MassSpec":
        return cls((mass,) * dim)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.masses)

    @property
    def dim(self) -> int:
        return len(self.masses)

    def ratios(self) -> np.ndarray:
        """m_i / m for every coordinate."""
        return self.array / self.reference_mass


@dataclass(frozen=True)
class PotentialSpec:
    """Time-independent potential.

    ``kind`` is one of ``free``, ``harmonic`` (V = k/2 |x - center|^2),
    ``double_slit_barrier`` (needs dim >= 2: a wall of thickness ``width`` across
    axis 0 at ``center``, pierced by two apertures of width ``width`` at
    ``+-slit_separation/2`` along axis 1) or ``custom_tabulated`` (``table``).
    """

    kind: str = "free"
    k: float = 1.0
    center: float = 0.0
    height: float = 0.0
    width: float = 0.0
    slit_separation: float = 0.0
    table: np.ndarray | None = field(default=None, compare=False, repr=False)

    def evaluate(self, grid: Grid) -> np.ndarray:
        if self.kind == "free":
            V = np.zeros(grid.shape)
        elif self.kind == "harmonic":
            V = sum(0.5 * self.k * grid.displacement(i, self.center) ** 2 for i in range(grid.dim))
            V = np.broadcast_to(V, grid.shape).copy()
        elif self.kind == "double_slit_barrier":
            if grid.dim < 2:
                raise ValueError("double_slit_barrier needs at least two dimensions")
            x0 = grid.displacement(0, self.center)
            x1 = grid.coords[1]
            wall = np.abs(x0) < self.width / 2
            half = self.slit_separation / 2
            slit = (np.abs(x1 - half) < self.width / 2) | (np.abs(x1 + half) < self.width / 2)
            V = np.broadcast_to(np.where(wall & ~slit, self.height, 0.0), grid.shape).copy()
        elif self.kind == "custom_tabulated":
            if self.table is None:
                raise ValueError("custom_tabulated potential needs a table")
            V = np.asarray(self.table, dtype=float)
            if V.shape != grid.shape:
                raise ValueError(f"potential table shape {V.shape} != grid shape {grid.shape}")
        else:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        check_finite(V)
        return V


def _kinetic_symbol(grid: Grid, masses: MassSpec) -> np.ndarray:
    """sum_i k_i^2 / (2 m_i) on the FFT grid."""
    out = np.zeros(grid.shape)
    for i, m in enumerate(masses.masses):
        shape = [1] * grid.dim
        shape[i] = grid.n
        out = out + (grid.k**2 / (2 * m)).reshape(shape)
    return out


class UnitaryStepper:
    """Strang split-step propagator exp(-iV dt/2) F^-1 exp(-iT dt) F exp(-iV dt/2).

    Phase factors are cached per timestep. With ``kinetic=False`` the kinetic
    term is switched off exactly (used for H = 0 collapse scenarios together
    with a zero potential).
    """

    def __init__(self, grid: Grid, V, masses: MassSpec, kinetic: bool = True):
        if masses.dim != grid.dim:
            raise ValueError(f"{masses.dim} masses for a {grid.dim}-D grid")
        self.grid = grid
        self.V = np.zeros(grid.shape) if V is None else np.asarray(V, dtype=float)
        check_finite(self.V)
        self.masses = masses
        self.kinetic = kinetic
        self._T = _kinetic_symbol(grid, masses)
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def trivial(self) -> bool:
        return not self.kinetic and not np.any(self.V)

    def _phases(self, dt: float):
        if dt not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[dt] = (np.exp(-0.5j * dt * self.V), np.exp(-1j * dt * self._T))
        return self._cache[dt]

    def step(self, psi, dt: float) -> np.ndarray:
        if not dt > 0:
            raise InvalidTimestep(f"timestep must be positive, got {dt}")
        psi = np.asarray(psi)
        check_finite(psi)
        if self.trivial:
            return psi.astype(complex, copy=True)
        half_v, kin = self._phases(dt)
        out = half_v * psi
        if self.kinetic:
            axes = self.grid.axes
            out = np.fft.ifftn(kin * np.fft.fftn(out, axes=axes), axes=axes)
        return half_v * out


def step_unitary(grid: Grid, psi, potential, masses: MassSpec, dt: float, kinetic: bool = True):
    """One Strang split step of the Schrodinger equation (norm preserving, 2nd order)."""
    V = potential.evaluate(grid) if isinstance(potential, PotentialSpec) else potential
    return UnitaryStepper(grid, V, masses, kinetic).step(psi, dt)


def norm(grid: Grid, psi):
    return np.sqrt(integrate(grid, np.abs(psi) ** 2))


def normalize(grid: Grid, psi) -> np.ndarray:
    nrm = np.asarray(norm(grid, psi))
    return psi / nrm.reshape(nrm.shape + (1,) * grid.dim)


def _node_mask(grid: Grid, rho) -> np.ndarray:
    peak = rho.max(axis=grid.axes, keepdims=True)
    return rho >= NODE_EPS * peak


def velocity_field(grid: Grid, psi, masses: MassSpec) -> np.ndarray:
    """M^-1 grad S computed as M^-1 Im(grad psi / psi), zero at (near-)nodes.

    Shape ``batch + (dim,) + grid.shape``.
    """
    psi = np.asarray(psi)
    check_finite(psi)
    rho = np.abs(psi) ** 2
    ok = _node_mask(grid, rho)
    safe = np.where(ok, rho, 1.0)
    comps = []
    for i, m in enumerate(masses.masses):
        dpsi = partial_derivative(grid, psi, i)
        comps.append(np.where(ok, (np.conj(psi) * dpsi).imag / safe, 0.0) / m)
    return np.stack(comps, axis=-grid.dim - 1)


def velocity_divergence(grid: Grid, psi, masses: MassSpec) -> np.ndarray:
    """div(M^-1 grad S) from the local identity d_i v_i = Im(d_i^2 psi/psi - (d_i psi/psi)^2)/m_i.

    Evaluated pointwise from spectral derivatives of psi, so it stays smooth
    where psi is smooth even though the regularized velocity field has a jump at
    the node threshold.
    """
    psi = np.asarray(psi)
    rho = np.abs(psi) ** 2
    ok = _node_mask(grid, rho)
    safe = np.where(ok, psi, 1.0)
    out = np.zeros(rho.shape)
    for i, m in enumerate(masses.masses):
        q1 = partial_derivative(grid, psi, i) / safe
        q2 = partial_derivative(grid, psi, i, order=2) / safe
        out = out + (q2 - q1 * q1).imag / m
    return np.where(ok, out, 0.0)


def polar_amplitude(grid: Grid, psi) -> np.ndarray:
    """R^2 = |psi|^2 as a normalized density."""
    psi = np.asarray(psi)
    check_finite(psi)
    rho = np.abs(psi) ** 2
    mass = np.asarray(integrate(grid, rho))
    return rho / mass.reshape(mass.shape + (1,) * grid.dim)


def quantum_potential(grid: Grid, psi, masses: MassSpec) -> np.ndarray:
    """Diagnostic -(div M^-1 grad R)/(2R) on a snapshot; zero at nodes."""
    psi = np.asarray(psi)
    R = np.abs(psi)
    ok = _node_mask(grid, R**2)
    lap = sum(partial_derivative(grid, R, i, order=2) / m for i, m in enumerate(masses.masses))
    return np.where(ok, -lap / (2 * np.where(ok, R, 1.0)), 0.0)


def energy(grid: Grid, psi, V, masses: MassSpec) -> float:
    """<H> with the kinetic part evaluated in Fourier space."""
    psi = np.asarray(psi)
    V = V.evaluate(grid) if isinstance(V, PotentialSpec) else np.asarray(V)
    psi_k = np.fft.fftn(psi, axes=grid.axes)
    kin = (np.abs(psi_k) ** 2 * _kinetic_symbol(grid, masses)).sum(axis=grid.axes)
    kin = kin * grid.cell_volume / grid.size
    pot = integrate(grid, V * np.abs(psi) ** 2)
    return (kin + pot) / integrate(grid, np.abs(psi) ** 2)


def gaussian_state(grid: Grid, center, width, momentum=0.0) -> np.ndarray:
    """Normalized product Gaussian psi ~ exp(-(x-c)^2/(4 s^2) + i p x) per axis.

    ``width`` is the standard deviation of |psi|^2. Displacements use the
    minimum image so the state is smooth across the periodic boundary when
    it is negligible there.
    """
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    s = np.broadcast_to(np.asarray(width, dtype=float), (grid.dim,))
    p = np.broadcast_to(np.asarray(momentum, dtype=float), (grid.dim,))
    psi = np.ones(grid.shape, dtype=complex)
    for i in range(grid.dim):
        dx = grid.displacement(i, c[i])
        psi = psi * np.exp(-dx**2 / (4 * s[i] ** 2) + 1j * p[i] * dx)
    return normalize(grid, psi)


def two_gaussian_state(grid: Grid, p0: float, separation: float, width: float,
                       center=0.0) -> np.ndarray:
    """sqrt(p0) phi_A + sqrt(1-p0) phi_B with phi_A at center + sep/2 (all coordinates).

    Peaks must be well separated for p0 to be the lobe weight; the cross term
    is not corrected for.
    """
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    a = gaussian_state(grid, c + separation / 2, width)
    b = gaussian_state(grid, c - separation / 2, width)
    return normalize(grid, np.sqrt(p0) * a + np.sqrt(1 - p0) * b)
