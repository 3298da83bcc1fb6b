"""Declarative scenario description shared by the harness, the config parser and the CLI."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import numpy as np

from .errors import ConfigError
from .numerics import Grid
from .schrodinger import MassSpec, PotentialSpec, gaussian_state, normalize, two_gaussian_state


@dataclass
class GridSpec:
    dim: int = 1
    n: int = 256
    a: float = -16.0
    b: float = 16.0

    def build(self) -> Grid:
        return Grid(self.dim, self.n, self.a, self.b)


@dataclass
class PotentialConfig:
    kind: str = "free"
    k: float = 1.0
    center: float = 0.0
    height: float = 0.0
    width: float = 0.0
    slit_separation: float = 0.0
    table_file: str = ""

    def build(self, grid: Grid) -> PotentialSpec:
        table = None
        if self.kind == "custom_tabulated":
            from .artifacts import read_snapshot
            if not self.table_file:
                raise ConfigError("custom_tabulated potential needs a table file", key="potential.table_file")
            tgrid, table, _ = read_snapshot(self.table_file)
            if tgrid != grid:
                raise ConfigError("potential table grid differs from the scenario grid",
                                  key="potential.table_file")
        return PotentialSpec(self.kind, self.k, self.center, self.height, self.width,
                             self.slit_separation, table)


@dataclass
class InitialSpec:
    """``gaussian`` / ``product_of_gaussians`` (per-axis center, width, momentum) or ``two_gaussian``."""

    kind: str = "gaussian"
    center: list = field(default_factory=lambda: [0.0])
    width: list = field(default_factory=lambda: [0.5])
    momentum: list = field(default_factory=lambda: [0.0])
    p0: float = 0.5
    separation: float = 4.0


@dataclass
class CollapseSpec:
    g: float = 0.0
    lam: float = 0.0
    sigma: float = 1.0


@dataclass
class FilterSpec:
    drift: str = "bohmian"
    A: list = field(default_factory=lambda: [[-1.0]])
    particles: int = 10000
    control_shift: float = 0.0
    control_width_scale: float = 1.5


@dataclass
class ScenarioSpec:
    name: str = "free_gaussian"
    grid: GridSpec = field(default_factory=GridSpec)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    masses: list = field(default_factory=lambda: [1.0])
    reference_mass: float = 1.0
    kinetic: bool = True
    initial: InitialSpec = field(default_factory=InitialSpec)
    collapse: CollapseSpec = field(default_factory=CollapseSpec)
    filter: FilterSpec = field(default_factory=FilterSpec)
    horizon: float = 1.0
    dt: float = 1e-3
    output_times: list = field(default_factory=list)
    replicas: int = 1
    seed: int = 0

    # ----- derived objects -------------------------------------------------
    def build_grid(self) -> Grid:
        return self.grid.build()

    def mass_spec(self) -> MassSpec:
        return MassSpec(tuple(self.masses), self.reference_mass)

    def G(self) -> np.ndarray:
        return self.collapse.g * np.sqrt(self.mass_spec().ratios())

    def potential_values(self, grid: Grid | None = None) -> np.ndarray:
        grid = grid or self.build_grid()
        return self.potential.build(grid).evaluate(grid)

    def initial_psi(self, grid: Grid | None = None) -> np.ndarray:
        grid = grid or self.build_grid()
        ini = self.initial
        if ini.kind in ("gaussian", "product_of_gaussians"):
            psi = gaussian_state(grid, _axis_list(ini.center, grid.dim), _axis_list(ini.width, grid.dim),
                                 _axis_list(ini.momentum, grid.dim))
        elif ini.kind == "two_gaussian":
            psi = two_gaussian_state(grid, ini.p0, ini.separation, float(ini.width[0]),
                                     center=_axis_list(ini.center, grid.dim))
        else:
            raise ConfigError(f"unknown initial state {ini.kind!r}", key="initial.kind")
        return normalize(grid, psi)

    def stability_bound(self) -> float:
        """Largest admissible dt for the split-step scheme: h^2 min(m_i) / pi."""
        h = (self.grid.b - self.grid.a) / self.grid.n
        return h * h * min(self.masses) / np.pi

    def steps(self, dt: float | None = None) -> int:
        return int(round(self.horizon / (dt or self.dt)))

    # ----- validation and identity ----------------------------------------
    def validate(self) -> "ScenarioSpec":
        try:
            grid = self.build_grid()
        except ValueError as exc:
            raise ConfigError(str(exc), key="grid") from None
        if len(self.masses) != grid.dim:
            raise ConfigError(f"{len(self.masses)} masses for a {grid.dim}-D grid", key="masses")
        try:
            self.mass_spec()
        except ValueError as exc:
            raise ConfigError(str(exc), key="masses") from None
        if not self.dt > 0:
            raise ConfigError("dt must be positive", key="dt")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive", key="horizon")
        if self.kinetic and self.dt > self.stability_bound():
            raise ConfigError(f"dt={self.dt} exceeds the stability bound h^2 min(m)/pi = "
                              f"{self.stability_bound():.6g}", key="dt")
        if any(t < 0 or t > self.horizon + 1e-12 for t in self.output_times):
            raise ConfigError("output times must lie in [0, horizon]", key="output_times")
        if self.replicas < 1:
            raise ConfigError("need at least one replica", key="replicas")
        if not 0 <= self.initial.p0 <= 1:
            raise ConfigError("p0 must lie in [0, 1]", key="initial.p0")
        if self.collapse.g < 0 or self.collapse.lam < 0 or not self.collapse.sigma > 0:
            raise ConfigError("collapse needs g >= 0, lam >= 0, sigma > 0", key="collapse")
        if self.filter.drift not in ("bohmian", "linear"):
            raise ConfigError(f"unknown drift {self.filter.drift!r}", key="filter.drift")
        try:
            self.potential.build(grid).evaluate(grid)
        except ValueError as exc:
            raise ConfigError(str(exc), key="potential") from None
        psi = self.initial_psi(grid)
        if not np.all(np.isfinite(psi)):
            raise ConfigError("initial state is not normalizable on the grid", key="initial")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def replace(self, **changes) -> "ScenarioSpec":
        """Deep copy with dotted-key overrides, e.g. ``replace(**{"collapse.g": 1.0})``."""
        out = copy.deepcopy(self)
        for key, value in changes.items():
            set_dotted(out, key, value)
        return out


def _axis_list(values, dim: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    return np.broadcast_to(arr if arr.size == dim else arr[:1], (dim,))


def set_dotted(obj, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        obj = getattr(obj, p)
    if not hasattr(obj, parts[-1]):
        raise ConfigError("unknown key", key=key)
    setattr(obj, parts[-1], value)


def field_names(cls, prefix: str = "") -> dict[str, type]:
    """Flattened dotted field names of a (nested) dataclass mapped to their default's type."""
    out = {}
    inst = cls()
    for f in fields(cls):
        value = getattr(inst, f.name)
        if is_dataclass(value):
            out.update(field_names(type(value), prefix + f.name + "."))
        else:
            out[prefix + f.name] = type(value)
    return out


def _free_gaussian() -> ScenarioSpec:
    return ScenarioSpec(name="free_gaussian", grid=GridSpec(1, 256, -16.0, 16.0),
                        initial=InitialSpec("gaussian", [0.0], [0.5], [0.0]),
                        horizon=1.0, dt=1e-3, output_times=[0.0, 0.5, 1.0])


def _harmonic_coherent() -> ScenarioSpec:
    return ScenarioSpec(name="harmonic_coherent", grid=GridSpec(1, 256, -16.0, 16.0),
                        potential=PotentialConfig("harmonic", k=1.0),
                        initial=InitialSpec("gaussian", [2.0], [float(np.sqrt(0.5))], [0.0]),
                        horizon=float(2 * np.pi), dt=1e-3,
                        output_times=[0.0, float(np.pi / 2), float(np.pi), float(2 * np.pi)])


def _two_slit() -> ScenarioSpec:
    # 1-D analogue: two coherent slit packets spreading into each other
    return ScenarioSpec(name="two_slit", grid=GridSpec(1, 256, -32.0, 32.0),
                        initial=InitialSpec("two_gaussian", [0.0], [0.5], [0.0], p0=0.5, separation=5.0),
                        horizon=2.0, dt=5e-3, output_times=[0.0, 0.5, 1.0, 1.5, 2.0],
                        replicas=10000)


def _two_gaussian() -> ScenarioSpec:
    return ScenarioSpec(name="two_gaussian", grid=GridSpec(1, 256, -16.0, 16.0), kinetic=False,
                        initial=InitialSpec("two_gaussian", [0.0], [0.25], [0.0], p0=0.7, separation=4.0),
                        collapse=CollapseSpec(g=1.0, lam=5.0, sigma=1.0),
                        horizon=2.0, dt=1e-3, output_times=[0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
                        replicas=2000)


def _collapse_equivalence() -> ScenarioSpec:
    s = _free_gaussian()
    s.name = "collapse_equivalence"
    s.collapse = CollapseSpec(g=1.0)
    return s


def _equilibrium() -> ScenarioSpec:
    s = _collapse_equivalence()
    s.name = "equilibrium"
    s.replicas = 500
    s.output_times = [0.0, 0.5, 1.0]
    return s


def _bohmian_filter() -> ScenarioSpec:
    s = _collapse_equivalence()
    s.name = "bohmian_filter"
    s.output_times = [0.5, 1.0]
    return s


def _linear_filter() -> ScenarioSpec:
    return ScenarioSpec(name="linear_filter", grid=GridSpec(1, 512, -4.0, 4.0), kinetic=False,
                        initial=InitialSpec("gaussian", [0.0], [0.5], [0.0]),
                        collapse=CollapseSpec(g=1.0), filter=FilterSpec(drift="linear", A=[[-1.0]]),
                        horizon=2.0, dt=1e-3, output_times=[0.5, 1.0, 1.5, 2.0])


def _continuum() -> ScenarioSpec:
    return ScenarioSpec(name="continuum", grid=GridSpec(1, 256, -16.0, 16.0), kinetic=False,
                        initial=InitialSpec("two_gaussian", [0.0], [0.25], [0.0], p0=0.7, separation=8.0),
                        collapse=CollapseSpec(g=1.0, lam=1000.0, sigma=float(np.sqrt(2000.0))),
                        horizon=1 / 32, dt=1e-4, output_times=[1 / 32], replicas=10000)


def _grw_discrete() -> ScenarioSpec:
    return ScenarioSpec(name="grw_discrete", grid=GridSpec(1, 256, -16.0, 16.0),
                        initial=InitialSpec("gaussian", [0.0], [2.0], [0.0]),
                        collapse=CollapseSpec(lam=2.0, sigma=1.0),
                        horizon=2.0, dt=1e-3, output_times=[0.0, 1.0, 2.0])


PRESETS = {
    "free_gaussian": _free_gaussian,
    "harmonic_coherent": _harmonic_coherent,
    "two_slit": _two_slit,
    "two_gaussian": _two_gaussian,
    "collapse_equivalence": _collapse_equivalence,
    "equilibrium": _equilibrium,
    "bohmian_filter": _bohmian_filter,
    "linear_filter": _linear_filter,
    "continuum": _continuum,
    "grw_discrete": _grw_discrete,
}


def preset(name: str) -> ScenarioSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown scenario preset {name!r}; choose from {sorted(PRESETS)}",
                          key="scenario")
    return PRESETS[name]()
