"""Periodic configuration-space grid and the field arithmetic shared by every module.

Fields are plain numpy arrays whose trailing ``grid.dim`` axes are the grid.
Any leading axes are treated as a batch (independent replicas), so most
operations here work unchanged on a single field or on a stack of them.
Vector fields put the component axis immediately before the grid axes.

Cells are centred on the nodes ``x_j = a + j*h`` and cover ``[x_j - h/2, x_j + h/2)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DelocalizedDensity, InvalidTimestep, NonFiniteField

#: Bit generator behind every stochastic operation. Philox is counter based and
#: produces the same stream on every platform for a given seed sequence.
RNG_ALGORITHM = "Philox4x64-10"

MAX_CELLS = 1 << 22
MIN_RESULTANT = 0.1


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[a, b)^dim`` with ``n`` points per axis."""

    dim: int
    n: int
    a: float
    b: float

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.n}")
        if not self.b > self.a:
            raise ValueError(f"empty extent [{self.a}, {self.b})")
        if self.n**self.dim > MAX_CELLS:
            raise ValueError(f"{self.n}^{self.dim} cells exceed the memory budget of {MAX_CELLS}")

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @cached_property
    def x(self) -> np.ndarray:
        """Node coordinates along one axis."""
        return self.a + self.h * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Sparse open mesh: component i broadcasts along grid axis i."""
        return tuple(np.meshgrid(*([self.x] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def points(self) -> np.ndarray:
        """All node coordinates as an ``(n**dim, dim)`` array in row-major order."""
        full = np.meshgrid(*([self.x] * self.dim), indexing="ij")
        return np.stack([c.ravel() for c in full], axis=-1)

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers along one axis (FFT ordering)."""
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    @cached_property
    def k_odd(self) -> np.ndarray:
        """Wavenumbers for odd-order derivatives; the Nyquist mode is dropped."""
        k = self.k.copy()
        k[self.n // 2] = 0.0
        return k

    def wrap(self, x):
        """Map coordinates into ``[a, b)``."""
        return self.a + np.mod(np.asarray(x, dtype=float) - self.a, self.length)

    def min_image(self, dx):
        """Map displacements into ``[-L/2, L/2)``."""
        L = self.length
        return np.mod(np.asarray(dx, dtype=float) + L / 2, L) - L / 2

    def displacement(self, axis: int, center) -> np.ndarray:
        """Minimum-image ``x_axis - center`` broadcast against the field shape."""
        return self.min_image(self.coords[axis] - center)

    def cell_index(self, points) -> np.ndarray:
        """Flat row-major index of the cell containing each point (``(..., dim)`` input)."""
        pts = np.asarray(points, dtype=float)
        idx = np.floor((pts - self.a) / self.h + 0.5).astype(np.int64) % self.n
        flat = np.zeros(idx.shape[:-1], dtype=np.int64)
        for d in range(self.dim):
            flat = flat * self.n + idx[..., d]
        return flat


def check_finite(values) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteField("field contains NaN or infinite values")


def integrate(grid: Grid, values) -> float | np.ndarray:
    """Riemann sum over the periodic grid (spectrally accurate for smooth periodic data)."""
    values = np.asarray(values)
    check_finite(values)
    out = values.sum(axis=grid.axes) * grid.cell_volume
    return out if np.ndim(out) else out.item()


def normalize_density(grid: Grid, rho) -> np.ndarray:
    mass = np.asarray(integrate(grid, rho))
    return rho / mass.reshape(mass.shape + (1,) * grid.dim)


def _broadcast_k(grid: Grid, axis: int, k: np.ndarray) -> np.ndarray:
    shape = [1] * grid.dim
    shape[axis] = grid.n
    return k.reshape(shape)


def partial_derivative(grid: Grid, values, axis: int, order: int = 1) -> np.ndarray:
    """Spectral derivative of the given order along one grid axis."""
    values = np.asarray(values)
    check_finite(values)
    ax = axis - grid.dim
    k = grid.k_odd if order % 2 else grid.k
    mult = _broadcast_k(grid, axis, (1j * k) ** order)
    out = np.fft.ifft(np.fft.fft(values, axis=ax) * mult, axis=ax)
    return out if np.iscomplexobj(values) else out.real


def gradient(grid: Grid, values) -> np.ndarray:
    """Spectral gradient; the component axis sits just before the grid axes."""
    comps = [partial_derivative(grid, values, i) for i in range(grid.dim)]
    return np.stack(comps, axis=-grid.dim - 1)


def laplacian(grid: Grid, values) -> np.ndarray:
    values = np.asarray(values)
    check_finite(values)
    ksq = sum(_broadcast_k(grid, i, grid.k**2) for i in range(grid.dim))
    out = np.fft.ifftn(np.fft.fftn(values, axes=grid.axes) * -ksq, axes=grid.axes)
    return out if np.iscomplexobj(values) else out.real


def divergence(grid: Grid, vector) -> np.ndarray:
    vector = np.asarray(vector)
    return sum(partial_derivative(grid, np.take(vector, i, axis=-grid.dim - 1), i)
               for i in range(grid.dim))


def marginal(grid: Grid, rho, axis: int) -> np.ndarray:
    """Marginal density along one coordinate (other coordinates integrated out)."""
    rho = np.asarray(rho)
    others = tuple(ax for i, ax in enumerate(grid.axes) if i != axis)
    return rho.sum(axis=others) * grid.h ** (grid.dim - 1)


def circular_center(grid: Grid, rho) -> tuple[np.ndarray, np.ndarray]:
    """Circular mean position and resultant length per coordinate, shape ``(..., dim)``."""
    rho = np.asarray(rho)
    theta = 2 * np.pi * (grid.x - grid.a) / grid.length
    phase = np.exp(1j * theta)
    centers, resultants = [], []
    for i in range(grid.dim):
        m = marginal(grid, rho, i)
        z = (m * phase).sum(axis=-1) * grid.h / (m.sum(axis=-1) * grid.h)
        resultants.append(np.abs(z))
        centers.append(grid.a + np.mod(np.angle(z), 2 * np.pi) * grid.length / (2 * np.pi))
    return np.stack(centers, axis=-1), np.stack(resultants, axis=-1)


def expectation_position(grid: Grid, rho) -> np.ndarray:
    """Mean position under ``rho`` using minimum-image averaging about the circular mean.

    Raises ``DelocalizedDensity`` if the mass is spread so widely that the
    circular mean is ill-conditioned (resultant length below 0.1).
    """
    rho = np.asarray(rho)
    check_finite(rho)
    center, resultant = circular_center(grid, rho)
    if np.any(resultant < MIN_RESULTANT):
        raise DelocalizedDensity(
            f"resultant length {float(np.min(resultant)):.3g} < {MIN_RESULTANT}")
    means = []
    for i in range(grid.dim):
        m = marginal(grid, rho, i)
        dx = grid.min_image(grid.x - center[..., i, None])
        mass = m.sum(axis=-1)
        means.append(center[..., i] + (m * dx).sum(axis=-1) / mass)
    return np.stack(means, axis=-1)


def sample_point(grid: Grid, rho, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw points with probability proportional to cell mass, jittered uniformly in the cell."""
    p = np.asarray(rho, dtype=float).ravel()
    cdf = np.cumsum(p)
    count = 1 if size is None else size
    u = rng.random(count) * cdf[-1]
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), p.size - 1)
    idx = np.stack(np.unravel_index(flat, grid.shape), axis=-1)
    jitter = rng.random((count, grid.dim)) - 0.5
    pts = grid.wrap(grid.a + (idx + jitter) * grid.h)
    return pts[0] if size is None else pts


def cdf_at(grid: Grid, rho, x) -> np.ndarray:
    """CDF of a 1-D cell density evaluated at ``x``, measured from the box start.

    Mass is taken piecewise-uniform within cells, matching ``sample_point``, so
    points drawn by ``sample_point`` map to exactly uniform values. The box is
    cut at ``a - h/2`` (the lower edge of cell 0).
    """
    if grid.dim != 1:
        raise ValueError("cdf_at is defined for one-dimensional grids only")
    rho = np.asarray(rho, dtype=float)
    mass = rho * grid.h
    total = mass.sum(axis=-1, keepdims=True)
    cum = np.concatenate([np.zeros(mass.shape[:-1] + (1,)), np.cumsum(mass, axis=-1)], axis=-1)
    s = np.mod(np.asarray(x, dtype=float) - grid.a + grid.h / 2, grid.length) / grid.h
    j = np.minimum(np.floor(s).astype(np.int64), grid.n - 1)
    frac = s - j
    if rho.ndim == 1:
        # one density, any number of points
        return (cum[j] + frac * mass[j]) / total[0]
    lo = np.take_along_axis(cum, j[..., None], axis=-1)[..., 0]
    cell = np.take_along_axis(mass, j[..., None], axis=-1)[..., 0]
    return (lo + frac * cell) / total[..., 0]


def histogram_density(grid: Grid, points, weights=None) -> np.ndarray:
    """Cell histogram of ``(N, dim)`` points as a density on the grid."""
    flat = grid.cell_index(np.atleast_2d(points))
    counts = np.bincount(flat, weights=weights, minlength=grid.size).astype(float)
    return (counts / counts.sum() / grid.cell_volume).reshape(grid.shape)


def l1_distance(grid: Grid, p, q):
    out = (np.abs(np.asarray(p) - np.asarray(q))).sum(axis=grid.axes) * grid.cell_volume
    return out if np.ndim(out) else out.item()


def gaussian_increments(rng: np.random.Generator, dt: float, D: int, size=None) -> np.ndarray:
    """Independent N(0, dt) Brownian increments of dimension ``D``."""
    if not dt > 0:
        raise InvalidTimestep(f"timestep must be positive, got {dt}")
    shape = (D,) if size is None else (*np.atleast_1d(size), D)
    return rng.standard_normal(shape) * np.sqrt(dt)


def seeded_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for ``seed`` and an optional spawn key.

    Replica ``r`` of a run with master seed ``s`` uses ``seeded_rng(s, r)``;
    deeper keys split further (e.g. ``(s, r, stream)``). The mapping goes through
    ``numpy.random.SeedSequence(s, spawn_key=key)`` and is stable across platforms.
    """
    if seed < 0 or seed >= 1 << 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


class NoiseBank:
    """Per-replica standard-normal streams drawn in fixed-size chunks.

    Each replica owns ``seeded_rng(seed, stream, replica)``; the values a
    replica sees depend only on that key, never on how many replicas share the
    bank or on how the caller batches them.
    """

    def __init__(self, seed: int, stream: int, replicas, dim: int, chunk: int = 256):
        self.replicas = list(replicas)
        self.dim = dim
        self.chunk = chunk
        self._rngs = [seeded_rng(seed, stream, r) for r in self.replicas]
        self._buf = None
        self._pos = chunk

    def standard(self) -> np.ndarray:
        """Next ``(replicas, dim)`` block of standard normals."""
        if self._pos == self.chunk:
            self._buf = np.stack(
                [g.standard_normal((self.chunk, self.dim)) for g in self._rngs], axis=0)
            self._pos = 0
        out = self._buf[:, self._pos]
        self._pos += 1
        return out

    def increments(self, dt: float) -> np.ndarray:
        if not dt > 0:
            raise InvalidTimestep(f"timestep must be positive, got {dt}")
        return self.standard() * np.sqrt(dt)


_STENCILS = {
    "cubic": np.arange(-1, 3),
    "quintic": np.arange(-2, 4),
}


def _weights(kind: str, t: np.ndarray) -> np.ndarray:
    """Interpolation weights for fractional offset ``t`` in [0, 1), stacked on the last axis."""
    if kind == "cubic":
        # Catmull-Rom
        t2, t3 = t * t, t * t * t
        return np.stack([
            0.5 * (-t3 + 2 * t2 - t),
            0.5 * (3 * t3 - 5 * t2 + 2),
            0.5 * (-3 * t3 + 4 * t2 + t),
            0.5 * (t3 - t2),
        ], axis=-1)
    if kind == "quintic":
        # six-point Lagrange
        nodes = _STENCILS["quintic"]
        out = []
        for j, oj in enumerate(nodes):
            w = np.ones_like(t)
            for m, om in enumerate(nodes):
                if m != j:
                    w = w * (t - om) / (oj - om)
            out.append(w)
        return np.stack(out, axis=-1)
    raise ValueError(f"unknown interpolation kind {kind!r}")


def interpolate(grid: Grid, values, points, kind: str = "cubic") -> np.ndarray:
    """Periodic tensor-product interpolation of grid values at arbitrary points.

    ``values`` has shape ``batch + grid.shape`` and ``points`` shape
    ``batch + (P, dim)`` (an empty batch is allowed). Returns ``batch + (P,)``.
    ``kind`` is ``"cubic"`` (Catmull-Rom) or ``"quintic"`` (six-point Lagrange).
    """
    values = np.asarray(values)
    points = np.asarray(points, dtype=float)
    batch = values.shape[: values.ndim - grid.dim]
    if points.shape[:-2] != batch:
        raise ValueError(f"points batch shape {points.shape[:-2]} != values batch {batch}")
    B = int(np.prod(batch, dtype=np.int64))
    vals = values.reshape(B, grid.size)
    pts = points.reshape(B, -1, grid.dim)
    s = (pts - grid.a) / grid.h
    base = np.floor(s)
    w = _weights(kind, s - base)
    base = base.astype(np.int64)
    offsets = _STENCILS[kind]
    out = np.zeros(pts.shape[:2], dtype=vals.dtype)
    for combo in itertools.product(range(len(offsets)), repeat=grid.dim):
        flat = np.zeros(pts.shape[:2], dtype=np.int64)
        weight = np.ones(pts.shape[:2])
        for d, j in enumerate(combo):
            flat = flat * grid.n + (base[..., d] + offsets[j]) % grid.n
            weight = weight * w[..., d, j]
        out += weight * np.take_along_axis(vals, flat, axis=1)
    return out.reshape(batch + pts.shape[1:2])
