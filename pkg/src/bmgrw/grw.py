"""GRW collapse dynamics: discrete Gaussian hits and the continuous-limit SDE.

The continuous stepper and the density SDE act by pointwise multiplication:
with ``y = G (x - <x>)`` (minimum image on the box) the state picks up

    psi -> psi * exp(-1/4 |y|^2 dt + 1/2 y.dW)
    rho -> rho * exp(-1/2 |y|^2 dt + y.dW)

followed by renormalization. Both are the exact solutions of the linear
multiplicative SDEs with ``<x>`` frozen at the start of the step, and the
second is the squared modulus of the first, so |psi|^2 and rho see identical
collapse factors whenever they share ``<x>`` and ``dW``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import AnnihilatedState, ClipMassExceeded, InvalidTimestep
from .numerics import (Grid, check_finite, expectation_position, integrate, interpolate,
                       marginal, sample_point)
from .numerics import divergence as field_divergence
from .schrodinger import MassSpec, UnitaryStepper, polar_amplitude

log = logging.getLogger(__name__)

#: Per-step budget for negative density removed by clipping after advection.
CLIP_BUDGET = 1e-4


@dataclass(frozen=True)
class GrwDiscreteParams:
    lam: float
    sigma: float
    masses: MassSpec

    def __post_init__(self):
        if self.lam < 0 or not self.sigma > 0:
            raise ValueError(f"need lambda >= 0 and sigma > 0, got {self.lam}, {self.sigma}")

    @property
    def rates(self) -> np.ndarray:
        """Per-particle hit rates lambda_i = (m_i/m) lambda."""
        return self.lam * self.masses.ratios()


@dataclass(frozen=True)
class HitEvent:
    time: float
    particle_index: int
    center: float

    def to_json(self) -> str:
        return json.dumps({"t": self.time, "i": self.particle_index, "z": self.center})


@dataclass(frozen=True)
class GrwContinuousParams:
    g: float
    masses: MassSpec

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("g must be non-negative")

    @classmethod
    def from_discrete(cls, params: GrwDiscreteParams) -> "GrwContinuousParams":
        """Continuum-limit coupling with g^2 = 2 lambda / sigma^2."""
        return cls(float(np.sqrt(2 * params.lam / params.sigma**2)), params.masses)

    @property
    def G(self) -> np.ndarray:
        return self.g * np.sqrt(self.masses.ratios())


def localization_apply(grid: Grid, psi, i: int, z: float, sigma: float) -> np.ndarray:
    """Multiply psi by exp(-(x_i - z)^2 / 2 sigma^2) and renormalize."""
    psi = np.asarray(psi)
    d = grid.displacement(i, z)
    out = psi * np.exp(-(d**2) / (2 * sigma**2))
    mass = integrate(grid, np.abs(out) ** 2)
    if not mass >= 1e-300:
        raise AnnihilatedState(f"post-hit norm^2 {mass:.3g} at z={z} on coordinate {i}")
    return out / np.sqrt(mass)


def sample_hit_schedule(params: GrwDiscreteParams, T: float, rng: np.random.Generator):
    """Merged, time-sorted ``(time, particle_index)`` pairs of independent Poisson processes."""
    if not T > 0:
        raise ValueError("horizon must be positive")
    hits = []
    for i, rate in enumerate(params.rates):
        count = rng.poisson(rate * T)
        hits.extend((float(t), i) for t in rng.random(count) * T)
    return sorted(hits)


def hit_center_density(grid: Grid, psi, i: int, sigma: float) -> np.ndarray:
    """Unnormalized density over z of integral |psi|^2 exp(-(x_i - z)^2/sigma^2) on the axis-i nodes.

    The marginal of |psi|^2 is circularly convolved with the minimum-image
    Gaussian of width sigma/sqrt(2).
    """
    rho = np.abs(np.asarray(psi)) ** 2
    m = marginal(grid, rho, i)
    kernel = np.exp(-grid.min_image(grid.x - grid.a) ** 2 / sigma**2)
    q = np.fft.ifft(np.fft.fft(m) * np.fft.fft(kernel)).real * grid.h
    return np.clip(q, 0.0, None)


def sample_hit_center(grid: Grid, psi, i: int, sigma: float, rng: np.random.Generator) -> float:
    """Draw a hit centre for coordinate ``i`` by inverse-CDF sampling of ``hit_center_density``."""
    q = hit_center_density(grid, psi, i, sigma)
    line = Grid(1, grid.n, grid.a, grid.b)
    return float(sample_point(line, q, rng)[0])


def step_grw_discrete(grid: Grid, psi, stepper: UnitaryStepper, params: GrwDiscreteParams,
                      t: float, dt: float, rng: np.random.Generator):
    """Unitary step followed by the Poisson hits falling in ``(t, t + dt]``, in time order."""
    if not dt > 0:
        raise InvalidTimestep(f"timestep must be positive, got {dt}")
    psi = stepper.step(psi, dt)
    hits = []
    for i, rate in enumerate(params.rates):
        count = rng.poisson(rate * dt) if rate > 0 else 0
        hits.extend((t + dt * (1.0 - u), i) for u in rng.random(count))
    events = []
    for when, i in sorted(hits):
        z = sample_hit_center(grid, psi, i, params.sigma, rng)
        psi = localization_apply(grid, psi, i, z, params.sigma)
        events.append(HitEvent(when, i, z))
    return psi, events


def collapse_exponent(grid: Grid, G, x_mean, dW, dt: float, scale: float):
    """``scale * (y.dW - 1/2 |y|^2 dt)`` with y = G (x - x_mean), batch-aware.

    ``G`` is the diagonal as a ``(dim,)`` array; ``x_mean`` and ``dW`` have shape
    ``batch + (dim,)``.
    """
    G = np.asarray(G, dtype=float)
    x_mean = np.asarray(x_mean, dtype=float)
    dW = np.asarray(dW, dtype=float)
    pad = (1,) * grid.dim
    expo = 0.0
    for i in range(grid.dim):
        if G[i] == 0:
            continue
        c = x_mean[..., i].reshape(x_mean.shape[:-1] + pad)
        w = dW[..., i].reshape(dW.shape[:-1] + pad)
        y = G[i] * grid.min_image(grid.coords[i] - c)
        expo = expo + scale * (y * w - 0.5 * y * y * dt)
    return expo


def _renormalize(grid: Grid, values, density: bool):
    mass = np.asarray(integrate(grid, values if density else np.abs(values) ** 2))
    shape = mass.shape + (1,) * grid.dim
    return values / (mass.reshape(shape) if density else np.sqrt(mass).reshape(shape)), mass


def step_grw_continuous(grid: Grid, psi, stepper: UnitaryStepper, G, dW, dt: float,
                        x_mean=None) -> np.ndarray:
    """One step of the continuous GRW equation for psi.

    Strang unitary step, then the multiplicative collapse factor with ``<x>``
    taken from the pre-step state, then renormalization. With G = 0 this is
    exactly ``stepper.step``. ``psi`` may carry a leading batch axis, in which
    case ``dW`` is ``(batch, dim)``.
    """
    if not dt > 0:
        raise InvalidTimestep(f"timestep must be positive, got {dt}")
    G = np.asarray(G, dtype=float)
    out = stepper.step(psi, dt)
    if not np.any(G):
        return out
    if x_mean is None:
        x_mean = expectation_position(grid, polar_amplitude(grid, psi))
    out = out * np.exp(collapse_exponent(grid, G, x_mean, dW, dt, 0.5))
    out, mass = _renormalize(grid, out, density=False)
    log.debug("pre-renormalization norm^2 drift %.3e", float(np.max(np.abs(mass - 1))))
    return out


def advect_density(grid: Grid, rho, velocity, dt: float, div=None) -> np.ndarray:
    """Semi-Lagrangian transport for d rho/dt + div(rho v) = 0 with v frozen over the step.

    Departure points come from a midpoint backtrack, values from six-point
    Lagrange interpolation, and compression from exp(-dt * mean(div v)) along the
    characteristic (trapezoid of the arrival and departure divergence).
    ``velocity`` is ``batch + (dim,) + grid.shape``.
    """
    rho = np.asarray(rho, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    batch = rho.shape[: rho.ndim - grid.dim]
    B = int(np.prod(batch, dtype=np.int64))
    vel = velocity.reshape((B, grid.dim) + grid.shape)
    if div is None:
        div = field_divergence(grid, vel)
    div = np.asarray(div, dtype=float).reshape((B,) + grid.shape)
    nodes = np.broadcast_to(grid.points, (B, grid.size, grid.dim))
    v_flat = vel.reshape(B, grid.dim, grid.size).transpose(0, 2, 1)
    mid = nodes - 0.5 * dt * v_flat
    v_mid = np.stack([interpolate(grid, vel[:, i], mid, kind="cubic")
                      for i in range(grid.dim)], axis=-1)
    depart = nodes - dt * v_mid
    rho_dep = interpolate(grid, rho.reshape((B,) + grid.shape), depart, kind="quintic")
    div_dep = interpolate(grid, div, depart, kind="cubic")
    jac = np.exp(-0.5 * dt * (div.reshape(B, grid.size) + div_dep))
    return (rho_dep * jac).reshape(rho.shape)


def step_density_sde(grid: Grid, rho, velocity, G, x_mean, dW, dt: float,
                     divergence=None) -> np.ndarray:
    """One step of d rho = -div(rho v) dt + rho (x - <x>).G dW.

    Transport by ``advect_density`` (skipped when ``velocity`` is None), then
    the multiplicative factor exp((x-<x>).G dW - 1/2 (x-<x>).G^2.(x-<x>) dt),
    clipping of negative values (budget ``CLIP_BUDGET`` per step) and
    renormalization. This is the single implementation behind both the GRW
    density equation and the conditional forward equation of the filter.
    """
    if not dt > 0:
        raise InvalidTimestep(f"timestep must be positive, got {dt}")
    rho = np.asarray(rho, dtype=float)
    check_finite(rho)
    out = rho if velocity is None else advect_density(grid, rho, velocity, dt, divergence)
    G = np.asarray(G, dtype=float)
    if np.any(G):
        out = out * np.exp(collapse_exponent(grid, G, x_mean, dW, dt, 1.0))
    neg = np.asarray(integrate(grid, np.clip(out, None, 0.0)))
    clipped = float(np.max(-neg))
    if clipped > 0:
        mass = np.asarray(integrate(grid, np.abs(out)))
        frac = float(np.max(-neg / mass))
        if frac > CLIP_BUDGET:
            raise ClipMassExceeded(f"clipped {frac:.3e} of the density in one step")
        log.debug("clipped negative density mass %.3e", frac)
        out = np.clip(out, 0.0, None)
    out, _ = _renormalize(grid, out, density=True)
    return out


def matter_density(grid: Grid, psi, i: int, masses: MassSpec) -> np.ndarray:
    """m_i times the marginal of |psi|^2 in coordinate i."""
    return masses.masses[i] * marginal(grid, np.abs(np.asarray(psi)) ** 2, i)


def write_events(path, events) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def read_events(path) -> list[HitEvent]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(HitEvent(float(d["t"]), int(d["i"]), float(d["z"])))
    return out
