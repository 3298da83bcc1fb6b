"""Run reports: assertions with tolerances, metric time series, seed manifest."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .artifacts import svg_line_plot, write_metrics_csv


@dataclass
class Assertion:
    name: str
    measured: float
    tolerance: float
    op: str = "<="           # measured op tolerance
    detail: str = ""

    @property
    def passed(self) -> bool:
        m, t = self.measured, self.tolerance
        if isinstance(m, float) and math.isnan(m):
            return False
        return {"<=": m <= t, ">=": m >= t, "<": m < t, ">": m > t, "==": m == t}[self.op]

    def to_dict(self) -> dict:
        return {"name": self.name, "measured": _clean(self.measured), "tolerance": _clean(self.tolerance),
                "op": self.op, "passed": bool(self.passed), "detail": self.detail}


@dataclass
class RunReport:
    name: str
    scenario_hash: str = ""
    seeds: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)     # name -> (times, values)
    values: dict = field(default_factory=dict)      # scalar or small-array results
    wall_clock: float = 0.0
    paths: dict = field(default_factory=dict, repr=False)   # raw arrays for artifact files, not hashed

    def check(self, name: str, measured, tolerance, op: str = "<=", detail: str = "") -> Assertion:
        a = Assertion(name, float(measured), float(tolerance), op, detail)
        self.assertions.append(a)
        return a

    def series(self, name: str, times, values) -> None:
        self.metrics[name] = (np.asarray(times, dtype=float), np.asarray(values, dtype=float))

    def merge(self, other: "RunReport", prefix: str = "") -> None:
        for a in other.assertions:
            self.assertions.append(Assertion(prefix + a.name, a.measured, a.tolerance, a.op, a.detail))
        for k, v in other.metrics.items():
            self.metrics[prefix + k] = v
        for k, v in other.values.items():
            self.values[prefix + k] = v
        for k, v in other.seeds.items():
            self.seeds[prefix + k] = v
        self.wall_clock += other.wall_clock

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def failures(self) -> list[Assertion]:
        return [a for a in self.assertions if not a.passed]

    def to_dict(self) -> dict:
        """Canonical content; wall-clock time is excluded so reruns hash identically."""
        return {
            "name": self.name,
            "scenario_hash": self.scenario_hash,
            "seeds": _clean(self.seeds),
            "passed": self.passed,
            "assertions": [a.to_dict() for a in self.assertions],
            "values": _clean(self.values),
            "metrics": {k: {"t": _clean(t), "value": _clean(v)} for k, (t, v) in sorted(self.metrics.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def failure_summary(self) -> dict:
        return {"report": self.name, "digest": self.digest(),
                "failed": [a.to_dict() for a in self.failures()]}

    def write(self, out_dir, svg: bool = True) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = self.to_dict()
        doc["digest"] = self.digest()
        (out / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
        (out / "timing.json").write_text(json.dumps({"wall_clock_s": self.wall_clock}) + "\n")
        write_metrics_csv(out / "metrics.csv", self.metrics)
        if svg:
            plots = out / "plots"
            plots.mkdir(exist_ok=True)
            for name, (t, v) in self.metrics.items():
                safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in name)
                (plots / f"{safe}.svg").write_text(svg_line_plot(t, v, title=name))


def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays to python, floats rounded-trip exactly via repr."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj
