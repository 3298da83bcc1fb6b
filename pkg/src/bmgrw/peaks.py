"""Collapse dynamics for superpositions of well-separated narrow packets (H = 0).

When the state is a superposition of K branches, branch k placing particle i
at ``centers[k, i]`` with negligible width and overlap, both collapse models
reduce to dynamics of the branch weights alone:

* discrete hits: particle i is hit at rate lambda_i, the centre z is drawn from
  sum_k w_k N(c_ki, sigma^2/2), and w_k picks up exp(-(c_ki - z)^2 / sigma^2);
* continuous: w_k picks up exp(y_k.dW - |y_k|^2 dt/2), y_k = G (c_k - <x>),
  the same multiplicative update the grid density stepper applies.

This reaches particle numbers far beyond the grid and gives the grid runs an
independent reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import NoiseBank, seeded_rng


@dataclass
class WeightPaths:
    times: np.ndarray          # output times
    weights: np.ndarray        # (R, n_times, K)
    exit_time: np.ndarray      # (R,), inf when the replica never left the band
    exit_branch: np.ndarray    # (R,), -1 when it never left
    hits: np.ndarray | None = None  # (R, N) per-particle hit counts (discrete model)


def _normalize_log(logw):
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def _exit_check(w, band, t, exit_time, exit_branch, active):
    if band is None:
        return active
    lo, hi = band
    top = w.max(axis=-1)
    done = active & (top > hi) & (w.min(axis=-1) < lo) if w.shape[-1] == 2 else active & (top > hi)
    exit_time[done] = t if np.ndim(t) == 0 else t[done]
    exit_branch[done] = np.argmax(w[done], axis=-1)
    return active & ~done


def simulate_continuous(centers, G, p0, horizon: float, dt: float, seed: int,
                        replicas: Sequence[int], output_times=(), band=None,
                        stream: int = 7) -> WeightPaths:
    """Continuous-model weight paths with per-replica noise streams.

    ``centers`` is ``(K, N)``, ``G`` the ``(N,)`` coupling diagonal. With
    ``band=(lo, hi)`` a replica stops once its largest weight exceeds ``hi``
    (and, for two branches, the other falls below ``lo``).
    """
    c = np.asarray(centers, dtype=float)
    G = np.asarray(G, dtype=float)
    K, N = c.shape
    R = len(replicas)
    w = np.tile(np.asarray(p0, dtype=float), (R, 1))
    steps = int(round(horizon / dt))
    marks = {int(round(t / dt)): j for j, t in enumerate(output_times)}
    out = np.empty((R, len(output_times), K))
    exit_time = np.full(R, np.inf)
    exit_branch = np.full(R, -1)
    active = np.ones(R, dtype=bool)
    bank = NoiseBank(seed, stream, replicas, N)
    for step in range(steps + 1):
        if step in marks:
            out[:, marks[step]] = w
        if step == steps:
            break
        dW = bank.increments(dt)
        mean = w @ c                                   # (R, N)
        y = G * (c[None] - mean[:, None])              # (R, K, N)
        logf = np.einsum("rkn,rn->rk", y, dW) - 0.5 * np.sum(y * y, axis=-1) * dt
        new = _normalize_log(np.log(np.maximum(w, 1e-300)) + logf)
        w = np.where(active[:, None], new, w)
        active = _exit_check(w, band, (step + 1) * dt, exit_time, exit_branch, active)
    return WeightPaths(np.asarray(output_times, dtype=float), out, exit_time, exit_branch)


def simulate_discrete(centers, rates, sigma: float, p0, horizon: float, seed: int,
                      replicas: Sequence[int], output_times=(), band=None,
                      stream: int = 11, block: int = 64, count_hits: bool = True) -> WeightPaths:
    """Discrete-hit weight paths; replica r draws from ``seeded_rng(seed, stream, r)``.

    Hits arrive as a Poisson process of total rate sum(rates); the struck particle
    is chosen proportionally to its rate.
    """
    c = np.asarray(centers, dtype=float)
    rates = np.asarray(rates, dtype=float)
    K, N = c.shape
    R = len(replicas)
    total = rates.sum()
    cum_rates = np.cumsum(rates) / total
    rngs = [seeded_rng(seed, stream, r) for r in replicas]
    w = np.tile(np.asarray(p0, dtype=float), (R, 1))
    t = np.zeros(R)
    outs = np.asarray(output_times, dtype=float)
    out = np.empty((R, len(outs), K))
    pending = np.zeros(R, dtype=np.int64)   # next output index per replica
    exit_time = np.full(R, np.inf)
    exit_branch = np.full(R, -1)
    hits = np.zeros((R, N), dtype=np.int64) if count_hits else None
    alive = np.ones(R, dtype=bool)           # before the horizon and inside the band
    active = np.ones(R, dtype=bool)          # not yet exited the band
    rows = np.arange(R)
    scale = sigma / np.sqrt(2.0)
    while alive.any():
        draws = [g.random((block, 3)) if a else None for g, a in zip(rngs, alive)]
        normals = [g.standard_normal(block) if a else None for g, a in zip(rngs, alive)]
        U = np.stack([d if d is not None else np.full((block, 3), 0.5) for d in draws])
        Z = np.stack([z if z is not None else np.zeros(block) for z in normals])
        for j in range(block):
            t_next = np.where(alive, t - np.log1p(-U[:, j, 0]) / total, t)
            # record outputs falling before the next hit
            for o in range(len(outs)):
                due = alive & (pending == o) & (t_next > outs[o])
                if due.any():
                    out[due, o] = w[due]
                    pending[due] += 1
            alive = alive & (t_next <= horizon)
            if not alive.any():
                break
            t = np.where(alive, t_next, t)
            i = np.minimum(np.searchsorted(cum_rates, U[:, j, 1], side="right"), N - 1)
            cw = np.cumsum(w, axis=-1)
            k = np.minimum((cw < U[:, j, 2:3] * cw[:, -1:]).sum(axis=-1), K - 1)
            z = c[k, i] + scale * Z[:, j]
            logf = -((c[:, i].T - z[:, None]) ** 2) / sigma**2   # (R, K)
            new = _normalize_log(np.log(np.maximum(w, 1e-300)) + logf)
            w = np.where(alive[:, None], new, w)
            if hits is not None:
                np.add.at(hits, (rows[alive], i[alive]), 1)
            active = _exit_check(w, band, t, exit_time, exit_branch, active)
            alive &= active
    # outputs beyond the last hit (or for stopped replicas) hold the final weights
    for o in range(len(outs)):
        left = pending <= o
        out[left, o] = w[left]
    return WeightPaths(outs, out, exit_time, exit_branch, hits)


def two_site_centers(n_particles: int, separation: float) -> np.ndarray:
    """Bulk two-site superposition: every particle at +sep/2 in branch A, -sep/2 in B."""
    return np.stack([np.full(n_particles, separation / 2), np.full(n_particles, -separation / 2)])


def suppression_times(centers, rates, sigma: float, seed: int, replicas: Sequence[int],
                      threshold: float = 1e-3, horizon: float = np.inf,
                      stream: int = 13) -> np.ndarray:
    """Time at which the smaller branch weight of a 50/50 superposition first drops below ``threshold``."""
    horizon = horizon if np.isfinite(horizon) else 1e6 / np.sum(rates)
    paths = simulate_discrete(centers, rates, sigma, [0.5, 0.5], horizon, seed, replicas,
                              band=(threshold, 1 - threshold), stream=stream, block=8,
                              count_hits=False)
    return paths.exit_time
