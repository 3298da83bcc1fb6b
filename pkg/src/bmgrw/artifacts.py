"""On-disk formats: field snapshots, increment paths, metric CSV and SVG line plots."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .numerics import Grid

SNAPSHOT_MAGIC = b"PWF1"
PATH_MAGIC = b"PWI1"
_HEADER = struct.Struct("<4sIIdddB")
_PATH_HEADER = struct.Struct("<4sIId")   # magic, D, steps, dt


def write_snapshot(path, grid: Grid, values, t: float) -> None:
    """Binary field snapshot: header then row-major little-endian f64 (re, im interleaved if complex)."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError(f"snapshot shape {values.shape} != grid shape {grid.shape}")
    complex_ = np.iscomplexobj(values)
    body = values.astype("<c16" if complex_ else "<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, grid.dim, grid.n, grid.a, grid.b, float(t), int(complex_)))
        fh.write(np.ascontiguousarray(body).tobytes())


def read_snapshot(path):
    """Returns ``(grid, values, t)``."""
    data = Path(path).read_bytes()
    magic, D, n, a, b, t, kind = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    grid = Grid(D, n, a, b)
    dtype = "<c16" if kind == 1 else "<f8"
    values = np.frombuffer(data, dtype=dtype, offset=_HEADER.size)
    if values.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} cells, found {values.size}")
    return grid, values.reshape(grid.shape).astype(complex if kind == 1 else float), t


def write_increments(path, increments, dt: float) -> None:
    """Increment path ``(steps, D)`` as little-endian f64 after a short header."""
    inc = np.asarray(increments, dtype="<f8")
    inc = inc.reshape(len(inc), -1) if inc.ndim != 2 else inc
    with open(path, "wb") as fh:
        fh.write(_PATH_HEADER.pack(PATH_MAGIC, inc.shape[1], inc.shape[0], float(dt)))
        fh.write(np.ascontiguousarray(inc).tobytes())


def read_increments(path):
    """Returns ``(increments, dt)``."""
    data = Path(path).read_bytes()
    magic, D, steps, dt = _PATH_HEADER.unpack_from(data)
    if magic != PATH_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    inc = np.frombuffer(data, dtype="<f8", offset=_PATH_HEADER.size)
    return inc.reshape(steps, D).astype(float), dt


def write_metrics_csv(path, series: dict) -> None:
    """``t,metric,value`` rows; ``series`` maps metric name to ``(times, values)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "metric", "value"])
        for name in sorted(series):
            times, values = series[name]
            for t, v in zip(times, values):
                w.writerow([repr(float(t)), name, repr(float(v))])


def read_metrics_csv(path) -> dict:
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ts, vs = out.setdefault(row["metric"], ([], []))
            ts.append(float(row["t"]))
            vs.append(float(row["value"]))
    return {k: (np.asarray(t), np.asarray(v)) for k, (t, v) in out.items()}


def svg_line_plot(times, values, title: str = "", width: int = 480, height: int = 300) -> str:
    """Minimal standalone SVG: one polyline path with axis box and min/max labels."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    pad = 40
    t0, t1 = (float(t.min()), float(t.max())) if t.size else (0.0, 1.0)
    v0, v1 = (float(np.nanmin(v)), float(np.nanmax(v))) if v.size else (0.0, 1.0)
    if t1 == t0:
        t1 = t0 + 1.0
    if v1 == v0:
        v1 = v0 + 1.0
    sx = (width - 2 * pad) / (t1 - t0)
    sy = (height - 2 * pad) / (v1 - v0)
    pts = [f"{pad + (a - t0) * sx:.2f},{height - pad - (b - v0) * sy:.2f}"
           for a, b in zip(t, v) if np.isfinite(b)]
    d = ("M" + " L".join(pts)) if pts else ""
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="#888"/>',
        f'<path d="{d}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>',
        f'<text x="{pad}" y="{pad - 10}" font-size="12">{title}</text>',
        f'<text x="2" y="{height - pad}" font-size="10">{v0:.3g}</text>',
        f'<text x="2" y="{pad + 10}" font-size="10">{v1:.3g}</text>',
        f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{t0:.3g}</text>',
        f'<text x="{width - pad - 20}" y="{height - pad + 15}" font-size="10">{t1:.3g}</text>',
        "</svg>",
    ]) + "\n"
