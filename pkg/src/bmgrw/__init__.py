"""Bohmian trajectories, GRW collapse and nonlinear filtering on periodic grids."""

from .errors import BmGrwError, ConfigError, EquivalenceBroken
from .numerics import Grid, seeded_rng
from .scenario import ScenarioSpec, preset

__version__ = "0.1.0"

__all__ = ["BmGrwError", "ConfigError", "EquivalenceBroken", "Grid", "ScenarioSpec", "preset", "seeded_rng"]
