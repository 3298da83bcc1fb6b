"""End-to-end experiments: co-driven GRW/filter densities, collapse statistics,
equilibrium under collapse, the continuum limit, rate laws and amplification.

Every stochastic quantity is drawn from ``seeded_rng(seed, stream, replica)``
with the stream numbers below, so a report is reproducible from its seed
manifest alone and independent of how replicas are batched or threaded.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .bohm import advance_positions, propagate_ensemble, sampling_floor
from .errors import EquivalenceBroken
from .filtering import (DriftSpec, binned_l1, kalman_bucy_oracle, particle_filter_oracle,
                        run_grid_filter, step_conditional_density)
from .grw import (GrwDiscreteParams, localization_apply, sample_hit_center, sample_hit_schedule,
                  step_grw_continuous)
from .numerics import (NoiseBank, cdf_at, expectation_position, histogram_density, integrate,
                       l1_distance, sample_point, seeded_rng)
from .peaks import simulate_continuous, simulate_discrete, suppression_times, two_site_centers
from .report import RunReport
from .scenario import ScenarioSpec
from .schrodinger import (UnitaryStepper, energy, polar_amplitude, velocity_divergence,
                          velocity_field)

STREAMS = {
    "initial_positions": 1,
    "observation_noise": 2,
    "collapse_noise": 3,
    "hits": 4,
    "particle_filter": 5,
    "peaks_continuous": 7,
    "peaks_discrete": 11,
    "suppression": 13,
    "hit_schedule": 17,
}

#: Replicas per batch; fixed so results never depend on the thread count.
CHUNK = 50


def seed_manifest(seed: int, *names: str) -> dict:
    return {"master_seed": int(seed), "rng": "numpy Philox4x64-10 via SeedSequence(seed, spawn_key)",
            "streams": {n: [int(seed), STREAMS[n], "replica"] for n in names}}


def _map_chunks(fn, replicas, threads: int = 1):
    chunks = [replicas[i:i + CHUNK] for i in range(0, len(replicas), CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


# --------------------------------------------------------------------------
# co-simulation of (X, Y, W, psi, rho)
# --------------------------------------------------------------------------

@dataclass
class CoSimulation:
    times: np.ndarray                 # (K+1,)
    l1: np.ndarray                    # (R, K+1)   L1(|psi|^2, rho)
    mean_gap: np.ndarray              # (R, K+1)   max_i |<x>_psi - <x>_rho|
    x_psi: np.ndarray                 # (R, K+1, D)
    dW: np.ndarray                    # (R, K, D)
    dY: np.ndarray                    # (R, K, D)
    record_times: np.ndarray
    X: np.ndarray                     # (R, n_rec, D)
    pit: np.ndarray | None            # (R, n_rec) for 1-D grids
    digest_psi_side: str = ""
    digest_rho_side: str = ""
    psi_path: np.ndarray | None = None   # (K+1,) + grid.shape, single-replica runs only
    rho_path: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def cosimulate(sc: ScenarioSpec, replicas, *, dt: float | None = None, substeps: int = 1,
               rho0=None, freeze_drift: bool = False, record_times=(), abort_l1: float | None = 0.5,
               keep_paths: bool = False, threads: int = 1) -> CoSimulation:
    """Co-evolve true configuration, observation, innovations, psi and rho per replica.

    Per step, with everything evaluated on the start-of-step state:
    dY = G X dt + dB; dW = dY - G <x>_psi dt; X moves by the midpoint rule in
    the velocity field of psi_t; psi steps by the continuous collapse equation
    and rho by the conditional forward equation (bohmian drift of psi_t, its
    own mean), both driven by the same dW.

    The observation noise of a step is the sum of ``substeps`` consecutive
    standard normals of the replica's stream, scaled to variance dt, so runs
    at dt and dt/2 (substeps 2 and 1) see the same Brownian path.
    """
    dt = dt or sc.dt
    grid = sc.build_grid()
    masses = sc.mass_spec()
    G = sc.G()
    stepper = UnitaryStepper(grid, sc.potential_values(grid), masses, kinetic=sc.kinetic)
    drift = DriftSpec("bohmian", masses=masses)
    K = sc.steps(dt)
    rec_steps = [int(round(t / dt)) for t in record_times]
    psi0 = sc.initial_psi(grid)
    dens0 = polar_amplitude(grid, psi0)
    rho_init = dens0 if rho0 is None else np.asarray(rho0, dtype=float)
    replicas = list(replicas)
    if keep_paths and len(replicas) != 1:
        raise ValueError("keep_paths needs a single replica")

    def chunk(reps):
        R = len(reps)
        D = grid.dim
        X = np.stack([sample_point(grid, dens0, seeded_rng(sc.seed, STREAMS["initial_positions"], r))
                      for r in reps])
        psi = np.broadcast_to(psi0, (R,) + grid.shape).copy()
        rho = np.broadcast_to(rho_init, (R,) + grid.shape).copy()
        bank = NoiseBank(sc.seed, STREAMS["observation_noise"], reps, D)
        l1 = np.empty((R, K + 1))
        gap = np.empty((R, K + 1))
        xs = np.empty((R, K + 1, D))
        dWs = np.empty((R, K, D))
        dYs = np.empty((R, K, D))
        Xrec = np.empty((R, len(rec_steps), D))
        pit = np.empty((R, len(rec_steps))) if D == 1 else None
        h_psi, h_rho = hashlib.sha256(), hashlib.sha256()
        psi_path, rho_path = [], []
        for k in range(K + 1):
            dens = polar_amplitude(grid, psi)
            m_psi = expectation_position(grid, dens)
            m_rho = expectation_position(grid, rho)
            l1[:, k] = l1_distance(grid, dens, rho)
            gap[:, k] = np.max(np.abs(m_psi - m_rho), axis=-1)
            xs[:, k] = m_psi
            if keep_paths:
                psi_path.append(psi[0].copy())
                rho_path.append(rho[0].copy())
            if abort_l1 is not None and np.any(l1[:, k] > abort_l1):
                raise EquivalenceBroken(f"L1(|psi|^2, rho) = {l1[:, k].max():.3f} > {abort_l1} "
                                        f"at t = {k * dt:.4g}")
            for j, s in enumerate(rec_steps):
                if s == k:
                    Xrec[:, j] = X
                    if pit is not None:
                        pit[:, j] = cdf_at(grid, rho, X[:, 0])
            if k == K:
                break
            z = sum(bank.standard() for _ in range(substeps))
            dB = z * np.sqrt(dt / substeps)
            dY = G * X * dt + dB
            dW = dY - G * m_psi * dt
            v = velocity_field(grid, psi, masses)
            div = velocity_divergence(grid, psi, masses)
            if not freeze_drift:
                X = advance_positions(grid, X, v, v, dt)
            h_psi.update(np.ascontiguousarray(dW).tobytes())
            new_psi = step_grw_continuous(grid, psi, stepper, G, dW, dt, x_mean=m_psi)
            h_rho.update(np.ascontiguousarray(dW).tobytes())
            rho = step_conditional_density(grid, rho, drift, G, dW, dt, psi=psi, x_mean=m_rho,
                                           fields=(v, div))
            psi = new_psi
            dWs[:, k] = dW
            dYs[:, k] = dY
        return (l1, gap, xs, dWs, dYs, Xrec, pit, h_psi.hexdigest(), h_rho.hexdigest(),
                psi_path, rho_path)

    parts = _map_chunks(chunk, replicas, threads)
    cat = lambda i: np.concatenate([p[i] for p in parts])   # noqa: E731
    pit = None if parts[0][6] is None else cat(6)
    out = CoSimulation(np.arange(K + 1) * dt, cat(0), cat(1), cat(2), cat(3), cat(4),
                       np.asarray(record_times, dtype=float), cat(5), pit,
                       hashlib.sha256("".join(p[7] for p in parts).encode()).hexdigest(),
                       hashlib.sha256("".join(p[8] for p in parts).encode()).hexdigest())
    if keep_paths:
        out.psi_path = np.stack(parts[0][9])
        out.rho_path = np.stack(parts[0][10])
    return out


def mismatched_prior(sc: ScenarioSpec):
    """Prior density differing from |psi_0|^2: width scaled and centre shifted by the filter.control_* keys."""
    grid = sc.build_grid()
    alt = sc.replace(**{"initial.width": [w * sc.filter.control_width_scale for w in sc.initial.width],
                        "initial.center": [c + sc.filter.control_shift for c in sc.initial.center]})
    return polar_amplitude(grid, alt.initial_psi(grid))


def run_equivalence(sc: ScenarioSpec, *, tolerance: float = 0.05, min_improvement: float = 1.5,
                    convergence: bool = True, control: bool = True, threads: int = 1) -> RunReport:
    t0 = time.perf_counter()
    rep = RunReport("equivalence", sc.digest(), seed_manifest(sc.seed, "initial_positions",
                                                                 "observation_noise"))
    replicas = list(range(sc.replicas))
    base = cosimulate(sc, replicas, dt=sc.dt, substeps=2 if convergence else 1, threads=threads)
    max_l1 = float(base.l1.max())
    rep.series("l1_psi2_rho", base.times, base.l1.max(axis=0))
    rep.series("mean_gap", base.times, base.mean_gap.max(axis=0))
    rep.series("x_psi", base.times, base.x_psi[0, :, 0])
    rep.check("max_l1_psi2_rho", max_l1, tolerance)
    rep.check("dW_hash_identical", float(base.digest_psi_side == base.digest_rho_side), 1.0, "==",
              detail=base.digest_psi_side)
    box = sc.grid.b - sc.grid.a
    excess = float(np.max(base.mean_gap - 10.0 * box * base.l1))
    rep.check("mean_gap_minus_10_box_l1", excess, 0.0, "<=")
    rep.values["max_l1"] = max_l1
    rep.paths["dW"] = base.dW[0]
    rep.paths["dY"] = base.dY[0]
    if convergence:
        fine = cosimulate(sc, replicas, dt=sc.dt / 2, substeps=1, threads=threads)
        ratio = max_l1 / float(fine.l1.max())
        rep.series("l1_psi2_rho_half_dt", fine.times, fine.l1.max(axis=0))
        rep.values["max_l1_half_dt"] = float(fine.l1.max())
        rep.check("dt_halving_improvement", ratio, min_improvement, ">=")
        rep.check("dW_hash_identical_half_dt", float(fine.digest_psi_side == fine.digest_rho_side),
                  1.0, "==")
    if control:
        ctl = cosimulate(sc, replicas, dt=sc.dt, substeps=2 if convergence else 1,
                         rho0=mismatched_prior(sc), abort_l1=None, threads=threads)
        final = float(ctl.l1[:, -1].min())
        rep.series("control_l1", ctl.times, ctl.l1.max(axis=0))
        rep.values["control_final_l1"] = final
        # the broken-equilibrium run must stay well above the scheme floor
        rep.check("control_final_l1_over_floor", final / max(max_l1, 1e-300), 10.0, ">=")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# Born-rule collapse statistics
# --------------------------------------------------------------------------

def _side_mask(sc: ScenarioSpec, grid):
    """Cells closer (minimum image) to peak A than to peak B."""
    c = np.broadcast_to(np.asarray(sc.initial.center, dtype=float), (grid.dim,))
    half = sc.initial.separation / 2
    dA = sum(grid.min_image(grid.coords[i] - (c[i] + half)) ** 2 for i in range(grid.dim))
    dB = sum(grid.min_image(grid.coords[i] - (c[i] - half)) ** 2 for i in range(grid.dim))
    return np.broadcast_to(dA < dB, grid.shape)


def _weight_a(grid, psi, mask):
    return integrate(grid, np.abs(psi) ** 2 * mask) / integrate(grid, np.abs(psi) ** 2)


def collapse_continuous_grid(sc: ScenarioSpec, band=(0.01, 0.99), threads: int = 1):
    """Grid runs of the continuous collapse equation (fresh noise), stopped on leaving ``band``.

    Returns ``(p_out, exit_branch, exit_time)``: weights of peak A at the
    scenario output times (frozen after exit), 1 for A / 0 for B / -1 for no exit.
    """
    grid = sc.build_grid()
    masses = sc.mass_spec()
    G = sc.G()
    stepper = UnitaryStepper(grid, sc.potential_values(grid), masses, kinetic=sc.kinetic)
    psi0 = sc.initial_psi(grid)
    mask = _side_mask(sc, grid)
    K = sc.steps()
    marks = {int(round(t / sc.dt)): j for j, t in enumerate(sc.output_times)}
    lo, hi = band

    def chunk(reps):
        R = len(reps)
        psi = np.broadcast_to(psi0, (R,) + grid.shape).copy()
        bank = NoiseBank(sc.seed, STREAMS["collapse_noise"], reps, grid.dim)
        p = np.asarray(_weight_a(grid, psi, mask))
        out = np.empty((R, len(marks)))
        branch = np.full(R, -1)
        when = np.full(R, np.inf)
        active = np.ones(R, dtype=bool)
        for k in range(K + 1):
            if k in marks:
                out[:, marks[k]] = p
            if k == K or not active.any():
                for kk, j in marks.items():
                    if kk > k:
                        out[:, j] = p
                break
            dW = bank.increments(sc.dt)     # drawn for every replica: streams stay aligned
            idx = np.flatnonzero(active)
            psi[idx] = step_grw_continuous(grid, psi[idx], stepper, G, dW[idx], sc.dt)
            p[idx] = _weight_a(grid, psi[idx], mask)
            done = active & ((p > hi) | (p < lo))
            branch[done] = (p[done] > hi).astype(int)
            when[done] = (k + 1) * sc.dt
            active &= ~done
        return out, branch, when

    parts = _map_chunks(chunk, list(range(sc.replicas)), threads)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def collapse_discrete_grid(sc: ScenarioSpec, band=(0.01, 0.99)):
    """Discrete-hit grid runs for H = 0 scenarios, event by event (exact hit times)."""
    grid = sc.build_grid()
    params = GrwDiscreteParams(sc.collapse.lam, sc.collapse.sigma, sc.mass_spec())
    rates = params.rates
    total = rates.sum()
    psi0 = sc.initial_psi(grid)
    mask = _side_mask(sc, grid)
    outs = np.asarray(sc.output_times, dtype=float)
    lo, hi = band
    R = sc.replicas
    p_out = np.empty((R, len(outs)))
    branch = np.full(R, -1)
    when = np.full(R, np.inf)
    hits = np.zeros(R, dtype=np.int64)
    for r in range(R):
        rng = seeded_rng(sc.seed, STREAMS["hits"], r)
        psi, t, p = psi0, 0.0, _weight_a(grid, psi0, mask)
        j = 0
        while True:
            t_next = t + rng.exponential(1.0 / total)
            while j < len(outs) and outs[j] < t_next:
                p_out[r, j] = p
                j += 1
            if t_next > sc.horizon:
                break
            t = t_next
            i = int(np.searchsorted(np.cumsum(rates) / total, rng.random(), side="right"))
            z = sample_hit_center(grid, psi, i, params.sigma, rng)
            psi = localization_apply(grid, psi, i, z, params.sigma)
            hits[r] += 1
            p = _weight_a(grid, psi, mask)
            if p > hi or p < lo:
                branch[r] = int(p > hi)
                when[r] = t
                p_out[r, j:] = p
                break
    return p_out, branch, when, hits


def _collapse_assertions(rep, prefix, sc, p_out, branch, tol_sigma=3.0):
    R = len(branch)
    p0 = sc.initial.p0
    exited = branch >= 0
    frac = float(np.mean(branch[exited] == 1)) if exited.any() else float("nan")
    rep.values[prefix + "terminal_fraction_a"] = frac
    rep.values[prefix + "non_exit_fraction"] = float(1 - exited.mean())
    rep.check(prefix + "terminal_fraction_a_error", abs(frac - p0),
              tol_sigma * np.sqrt(p0 * (1 - p0) / R))
    rep.check(prefix + "non_exit_fraction", float(1 - exited.mean()), 0.05)
    means = p_out.mean(axis=0)
    sems = p_out.std(axis=0, ddof=1) / np.sqrt(R)
    rep.series(prefix + "mean_p", sc.output_times, means)
    z = np.abs(means - p0) / np.maximum(sems, 1e-12)
    worst = int(np.argmax(z))
    rep.check(prefix + "martingale_max_z", float(z[worst]), tol_sigma,
              detail=f"t={sc.output_times[worst]}, mean={means[worst]:.5f}")
    return frac


def run_collapse_statistics(sc: ScenarioSpec, *, model: str = "both", threads: int = 1) -> RunReport:
    t0 = time.perf_counter()
    rep = RunReport("collapse_statistics", sc.digest(),
                    seed_manifest(sc.seed, "collapse_noise", "hits"))
    R = sc.replicas
    fracs = {}
    if model in ("continuous", "both"):
        p_out, branch, when = collapse_continuous_grid(sc, threads=threads)
        fracs["continuous"] = _collapse_assertions(rep, "continuous_", sc, p_out, branch)
        rep.values["continuous_median_exit_time"] = float(np.median(when[np.isfinite(when)]))
    if model in ("discrete", "both"):
        p_out, branch, when, hits = collapse_discrete_grid(sc)
        fracs["discrete"] = _collapse_assertions(rep, "discrete_", sc, p_out, branch)
        rep.values["discrete_mean_hits"] = float(hits.mean())
    if len(fracs) == 2:
        p0 = sc.initial.p0
        rep.check("continuous_vs_discrete_fraction", abs(fracs["continuous"] - fracs["discrete"]),
                  3 * np.sqrt(2 * p0 * (1 - p0) / R))
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# quantum equilibrium under collapse and innovations statistics
# --------------------------------------------------------------------------

def ks_uniform(u):
    res = stats.kstest(np.asarray(u), "uniform")
    return float(res.statistic), float(res.pvalue)


def innovations_statistics(dW, T: float) -> dict:
    """Pooled Brownian-motion diagnostics of innovations increments ``(R, K, D)``."""
    R, K, D = dW.shape
    W_T = dW.sum(axis=1)
    qv = (dW**2).sum(axis=1)
    num = np.sum(dW[:, 1:] * dW[:, :-1], axis=(0, 1))
    den = np.sum(dW**2, axis=(0, 1))
    return {
        "W_T_mean": W_T.mean(axis=0),
        "W_T_mean_bound": 3 * np.sqrt(T / R),
        "W_T_var": W_T.var(axis=0, ddof=1),
        "qv_mean": qv.mean(axis=0),
        "qv_rel_error": np.abs(qv.mean(axis=0) - T) / T,
        "lag1_autocorr": num / den,
        "lag1_bound": 3 / np.sqrt(R * (K - 1)),
    }


def run_equilibrium_under_collapse(sc: ScenarioSpec, *, control: bool = True,
                                   threads: int = 1) -> RunReport:
    t0 = time.perf_counter()
    rep = RunReport("equilibrium_under_collapse", sc.digest(),
                    seed_manifest(sc.seed, "initial_positions", "observation_noise"))
    R = sc.replicas
    times = sorted(set(sc.output_times) | {0.0})
    sim = cosimulate(sc, list(range(R)), record_times=times, threads=threads)
    crit = 1.63 / np.sqrt(R)
    for j, t in enumerate(times):
        D, p = ks_uniform(sim.pit[:, j])
        rep.values[f"ks_stat_t{t:g}"] = D
        rep.values[f"ks_pvalue_t{t:g}"] = p
        if t > 0:
            rep.check(f"pit_ks_pvalue_t{t:g}", p, 0.01, ">=")
            rep.check(f"pit_ks_stat_t{t:g}", D, crit)
    rep.series("l1_psi2_rho", sim.times, sim.l1.max(axis=0))
    st = innovations_statistics(sim.dW, sc.horizon)
    rep.values.update({"innovations_" + k: v for k, v in st.items()})
    rep.check("innovations_W_T_mean", float(np.max(np.abs(st["W_T_mean"]))), st["W_T_mean_bound"])
    rep.check("innovations_qv_rel_error", float(np.max(st["qv_rel_error"])), 0.05)
    rep.check("innovations_lag1_autocorr", float(np.max(np.abs(st["lag1_autocorr"]))), st["lag1_bound"])
    if control:
        ctl = cosimulate(sc, list(range(R)), record_times=times, freeze_drift=True, threads=threads)
        D, p = ks_uniform(ctl.pit[:, -1])
        rep.values["control_ks_stat"] = D
        rep.values["control_ks_pvalue"] = p
        rep.check("control_frozen_drift_ks_pvalue", p, 0.01, "<")
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# discrete -> continuous limit, rate law, amplification
# --------------------------------------------------------------------------

def _peak_centers(sc: ScenarioSpec) -> np.ndarray:
    c = float(np.atleast_1d(sc.initial.center)[0])
    half = sc.initial.separation / 2
    return np.array([[c + half] * len(sc.masses), [c - half] * len(sc.masses)])


def run_continuum_limit(sc: ScenarioSpec, *, ladder=(10.0, 100.0, 1000.0), runs: int | None = None,
                        sigma_scale: float = 2.0, control: bool = True) -> RunReport:
    """Kolmogorov distance between discrete-hit and continuous weight distributions at fixed t.

    Each rung uses sigma^2 = 2 lambda / g^2; the control rung multiplies sigma by
    ``sigma_scale`` (so 2 lambda / sigma^2 != g^2) and must not converge.
    """
    t0 = time.perf_counter()
    rep = RunReport("continuum_limit", sc.digest(),
                    seed_manifest(sc.seed, "peaks_continuous", "peaks_discrete"))
    runs = runs or sc.replicas
    reps = list(range(runs))
    t_fix = float(sc.output_times[-1]) if sc.output_times else sc.horizon
    c = _peak_centers(sc)
    g = sc.collapse.g
    G = sc.G()
    ratios = sc.mass_spec().ratios()
    p0 = [sc.initial.p0, 1 - sc.initial.p0]
    cont = simulate_continuous(c, G, p0, t_fix, sc.dt, sc.seed, reps, [t_fix],
                               stream=STREAMS["peaks_continuous"]).weights[:, 0, 0]
    # <x>_t = sum_k w_k c_k for the first coordinate
    x_cont = cont * c[0, 0] + (1 - cont) * c[1, 0]
    var_cont = float(np.var(x_cont, ddof=1))
    rep.values["continuous_var_mean_x"] = var_cont
    dists, ctl_dists, variances = [], [], []
    for n, lam in enumerate(ladder):
        sigma = float(np.sqrt(2 * lam) / g)
        p = simulate_discrete(c, lam * ratios, sigma, p0, t_fix, sc.seed, reps, [t_fix],
                              stream=STREAMS["peaks_discrete"] + 100 * n).weights[:, 0, 0]
        dists.append(float(stats.ks_2samp(cont, p).statistic))
        variances.append(float(np.var(p * c[0, 0] + (1 - p) * c[1, 0], ddof=1)))
        if control:
            q = simulate_discrete(c, lam * ratios, sigma * sigma_scale, p0, t_fix, sc.seed, reps, [t_fix],
                                  stream=STREAMS["peaks_discrete"] + 100 * n + 50).weights[:, 0, 0]
            ctl_dists.append(float(stats.ks_2samp(cont, q).statistic))
    rep.series("ks_distance", ladder, dists)
    rep.series("var_mean_x", ladder, variances)
    rep.values["ks_floor_95"] = float(1.36 * np.sqrt(2.0 / runs))
    rep.check("ks_monotone_decrease", float(all(b < a for a, b in zip(dists, dists[1:]))), 1.0, "==",
              detail=str([round(d, 4) for d in dists]))
    rep.check("ks_final_rung", dists[-1], 0.1)
    gaps = [abs(v - var_cont) for v in variances]
    rep.check("var_mean_x_monotone", float(all(b < a for a, b in zip(gaps, gaps[1:]))), 1.0, "==",
              detail=str([round(v, 5) for v in variances]))
    rep.check("var_mean_x_final_rel_error", gaps[-1] / var_cont, 0.10)
    if control:
        rep.series("control_ks_distance", ladder, ctl_dists)
        rep.check("control_final_rung_ks", ctl_dists[-1], 0.1, ">")
    rep.wall_clock = time.perf_counter() - t0
    return rep


def run_rate_law(seed: int, *, masses=(1.0, 2.0), lam: float = 1.0, horizon: float = 1e4,
                 tolerance: float = 0.05) -> RunReport:
    """Per-particle hit counts over a long horizon against lambda_i = (m_i/m) lambda."""
    from .schrodinger import MassSpec
    t0 = time.perf_counter()
    rep = RunReport("rate_law", "", seed_manifest(seed, "hit_schedule"))
    params = GrwDiscreteParams(lam, 1.0, MassSpec(tuple(masses)))
    hits = sample_hit_schedule(params, horizon, seeded_rng(seed, STREAMS["hit_schedule"], 0))
    counts = np.bincount([i for _, i in hits], minlength=len(masses))
    for i, rate in enumerate(params.rates):
        rep.check(f"rate_rel_error_particle{i}", abs(counts[i] / horizon - rate) / rate, tolerance)
    rep.check("count_ratio_rel_error", abs(counts[1] / counts[0] - params.rates[1] / params.rates[0])
              / (params.rates[1] / params.rates[0]), tolerance)
    rep.values["counts"] = counts
    rep.wall_clock = time.perf_counter() - t0
    return rep


def run_amplification(seed: int, *, sizes=(1, 10, 100, 1000, 10000), lam: float = 1.0,
                      sigma: float = 1.0, separation: float = 10.0, replicas: int = 2000,
                      tolerance: float = 0.10) -> RunReport:
    """Suppression rate of the off-branch of an N-particle two-site superposition vs N lambda."""
    t0 = time.perf_counter()
    rep = RunReport("amplification", "", seed_manifest(seed, "suppression"))
    rates = []
    for N in sizes:
        tau = suppression_times(two_site_centers(N, separation), np.full(N, lam), sigma, seed,
                                list(range(replicas)), stream=STREAMS["suppression"] * 100000 + N)
        rate = 1.0 / float(np.mean(tau))
        rates.append(rate)
        rep.check(f"rate_over_N_lambda_rel_error_N{N}", abs(rate / (N * lam) - 1), tolerance)
    slope = np.polyfit(np.log(sizes), np.log(rates), 1)[0]
    rep.series("suppression_rate", sizes, rates)
    rep.values["loglog_slope"] = float(slope)
    rep.check("loglog_slope_error", abs(slope - 1), tolerance)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# filter oracle triangle
# --------------------------------------------------------------------------

#: Comparison partition for grid filter vs particle filter densities.
FILTER_COMPARISON_BINS = 64


def run_filter_bohmian(sc: ScenarioSpec, *, particles: int | None = None, tolerance: float = 0.05,
                       bins: int = FILTER_COMPARISON_BINS) -> RunReport:
    """Grid filter and bootstrap particle filter on one shared observation record."""
    t0 = time.perf_counter()
    rep = RunReport("filter_bohmian", sc.digest(),
                    seed_manifest(sc.seed, "initial_positions", "observation_noise", "particle_filter"))
    grid = sc.build_grid()
    masses = sc.mass_spec()
    G = sc.G()
    sim = cosimulate(sc, [0], keep_paths=True)
    dY = sim.dY[0]
    prior = polar_amplitude(grid, sim.psi_path[0])
    drift = DriftSpec("bohmian", masses=masses)
    dens, dWs = run_grid_filter(grid, prior, drift, G, dY, sc.dt, psi_path=sim.psi_path)
    # the filter builds its innovations from its own mean, the co-simulation from <x>_psi
    psi2 = polar_amplitude(grid, sim.psi_path)
    l1_psi = l1_distance(grid, dens, psi2)
    rep.series("grid_filter_vs_psi2_l1", sim.times, l1_psi)
    rep.values["innovations_max_abs_difference"] = float(np.max(np.abs(dWs - sim.dW[0])))
    rep.check("grid_filter_vs_psi2_l1_max", float(np.max(l1_psi)), tolerance)
    steps = [int(round(t / sc.dt)) for t in sc.output_times]
    N = particles or sc.filter.particles
    k, pf_dens, pf_means, ess = particle_filter_oracle(
        grid, drift, G, dY, sc.dt, prior, N, seeded_rng(sc.seed, STREAMS["particle_filter"], 0),
        psi_path=sim.psi_path, output_steps=steps)
    l1_coarse = [binned_l1(grid, pf_dens[j], dens[s], bins) for j, s in enumerate(steps)]
    l1_fine = [l1_distance(grid, pf_dens[j], dens[s]) for j, s in enumerate(steps)]
    grid_means = [expectation_position(grid, dens[s]) for s in steps]
    rep.series("pf_vs_grid_l1_binned", sc.output_times, l1_coarse)
    rep.series("pf_vs_grid_l1_cells", sc.output_times, l1_fine)
    rep.values["pf_min_ess"] = float(ess.min())
    rep.values["pf_means"] = pf_means
    rep.values["grid_means"] = np.asarray(grid_means)
    rep.values["comparison_bins"] = bins
    rep.check("pf_vs_grid_l1_max", float(max(l1_coarse)), tolerance,
              detail=f"on {bins} equal bins; per-cell L1 {max(l1_fine):.4f}")
    rep.paths["dY"] = dY
    rep.paths["dW"] = dWs
    rep.paths["filter_summary"] = _filter_summary(grid, dens, sc.dt, l1_psi)
    rep.wall_clock = time.perf_counter() - t0
    return rep


def _filter_summary(grid, dens, dt, l1_vs_psi2=None, every: int = 10):
    """``(times, means, variances, l1)`` of the grid filter, thinned to every ``every`` steps."""
    idx = np.arange(0, len(dens), every)
    means = expectation_position(grid, dens[idx])
    var = np.stack([integrate(grid, grid.min_image(grid.coords[i] - means[:, i].reshape((-1,) + (1,) * grid.dim))
                              ** 2 * dens[idx]) for i in range(grid.dim)], axis=-1)
    l1 = None if l1_vs_psi2 is None else np.asarray(l1_vs_psi2)[idx]
    return idx * dt, means, var, l1


def linear_signal_path(sc: ScenarioSpec, x0, replica: int = 0):
    """Noise-free linear signal X' = A X and its observation increments."""
    A = np.atleast_2d(np.asarray(sc.filter.A, dtype=float))
    G = sc.G()
    K = sc.steps()
    bank = NoiseBank(sc.seed, STREAMS["observation_noise"], [replica], len(sc.masses))
    X = np.asarray(x0, dtype=float).copy()
    dY = np.empty((K, len(X)))
    # exact flow of the linear signal over one step
    from scipy.linalg import expm
    flow = expm(A * sc.dt)
    for k in range(K):
        dY[k] = G * X * sc.dt + bank.increments(sc.dt)[0]
        X = flow @ X
    return dY


def run_filter_linear(sc: ScenarioSpec, *, tolerance: float = 0.01) -> RunReport:
    """Grid filter with linear drift against the Kalman-Bucy mean and variance."""
    t0 = time.perf_counter()
    rep = RunReport(f"filter_linear_A{sc.filter.A[0][0]:g}", sc.digest(),
                    seed_manifest(sc.seed, "initial_positions", "observation_noise"))
    grid = sc.build_grid()
    G = sc.G()
    prior = polar_amplitude(grid, sc.initial_psi(grid))
    m0 = np.asarray(sc.initial.center, dtype=float)
    P0 = np.diag(np.asarray(sc.initial.width, dtype=float) ** 2)
    x0 = sample_point(grid, prior, seeded_rng(sc.seed, STREAMS["initial_positions"], 0))
    dY = linear_signal_path(sc, x0)
    drift = DriftSpec("linear", A=sc.filter.A)
    dens, _ = run_grid_filter(grid, prior, drift, G, dY, sc.dt)
    kb_m, kb_P = kalman_bucy_oracle(sc.filter.A, G, m0, P0, dY, sc.dt)
    steps = [int(round(t / sc.dt)) for t in sc.output_times]
    dm, dP = [], []
    for s in steps:
        mean = expectation_position(grid, dens[s])
        var = integrate(grid, grid.min_image(grid.x - mean[0]) ** 2 * dens[s])
        P = kb_P[s][0, 0]
        dm.append(abs(mean[0] - kb_m[s][0]) / np.sqrt(P))
        dP.append(abs(var - P) / P)
    rep.series("mean_error_over_std", sc.output_times, dm)
    rep.series("var_rel_error", sc.output_times, dP)
    rep.check("kb_mean_error_over_std", float(max(dm)), tolerance)
    rep.paths["dY"] = dY
    rep.paths["filter_summary"] = _filter_summary(grid, dens, sc.dt)
    rep.check("kb_var_rel_error", float(max(dP)), tolerance)
    rep.wall_clock = time.perf_counter() - t0
    return rep


# --------------------------------------------------------------------------
# single-model runs used by the CLI subcommands
# --------------------------------------------------------------------------

def free_packet_variance(s: float, t: float, m: float = 1.0) -> float:
    """Position variance of a free Gaussian packet with initial std s: s^2 (1 + t^2 / (4 m^2 s^4))."""
    return s * s * (1 + t * t / (4 * m * m * s**4))


def _position_variance(grid, rho):
    mean = expectation_position(grid, rho)
    return integrate(grid, grid.min_image(grid.x - mean[..., 0, None]) ** 2 * rho)


def run_schrodinger(sc: ScenarioSpec, *, snapshots: list | None = None) -> RunReport:
    """Unitary evolution; checks norm drift and, for free Gaussian packets, the width law."""
    t0 = time.perf_counter()
    rep = RunReport("schrodinger", sc.digest(), {"master_seed": sc.seed})
    grid = sc.build_grid()
    masses = sc.mass_spec()
    V = sc.potential_values(grid)
    stepper = UnitaryStepper(grid, V, masses, kinetic=sc.kinetic)
    psi = sc.initial_psi(grid)
    K = sc.steps()
    marks = {int(round(t / sc.dt)) for t in sc.output_times} | {K}
    E0 = energy(grid, psi, V, masses)
    ts, norms, variances, energies = [], [], [], []
    for k in range(K + 1):
        if k in marks:
            ts.append(k * sc.dt)
            norms.append(np.sqrt(integrate(grid, np.abs(psi) ** 2)))
            energies.append(energy(grid, psi, V, masses))
            if grid.dim == 1:
                variances.append(_position_variance(grid, polar_amplitude(grid, psi)))
            if snapshots is not None:
                snapshots.append((k * sc.dt, psi.copy()))
        if k < K:
            psi = stepper.step(psi, sc.dt)
    rep.series("norm", ts, norms)
    rep.series("energy", ts, energies)
    rep.check("norm_drift", float(np.max(np.abs(np.asarray(norms) - 1))), 1e-8)
    rep.check("energy_rel_drift", float(np.max(np.abs(np.asarray(energies) - E0)) / max(abs(E0), 1e-300)),
              1e-6)
    if grid.dim == 1:
        rep.series("variance", ts, variances)
        if _is_free_gaussian(sc):
            s = float(sc.initial.width[0])
            exact = np.array([free_packet_variance(s, t, sc.masses[0]) for t in ts])
            rep.check("width_law_rel_error", float(np.max(np.abs(np.asarray(variances) / exact - 1))), 1e-6)
    rep.values["psi_final_digest"] = hashlib.sha256(np.ascontiguousarray(psi).tobytes()).hexdigest()
    rep.wall_clock = time.perf_counter() - t0
    return rep


def _is_free_gaussian(sc: ScenarioSpec) -> bool:
    return (sc.potential.kind == "free" and sc.kinetic and sc.initial.kind == "gaussian")


def run_grw_continuous(sc: ScenarioSpec, *, snapshots: list | None = None) -> RunReport:
    """One path of the continuous collapse equation with fresh noise (replica 0).

    With g = 0 the path must coincide bit for bit with unitary evolution.
    """
    t0 = time.perf_counter()
    rep = RunReport("grw_continuous", sc.digest(), seed_manifest(sc.seed, "collapse_noise"))
    grid = sc.build_grid()
    masses = sc.mass_spec()
    G = sc.G()
    stepper = UnitaryStepper(grid, sc.potential_values(grid), masses, kinetic=sc.kinetic)
    bank = NoiseBank(sc.seed, STREAMS["collapse_noise"], [0], grid.dim)
    psi = sc.initial_psi(grid)
    ref = psi.copy()
    K = sc.steps()
    marks = {int(round(t / sc.dt)) for t in sc.output_times} | {K}
    ts, norms, means, variances = [], [], [], []
    identical = True
    dWs = np.empty((K, grid.dim))
    for k in range(K + 1):
        if k in marks:
            ts.append(k * sc.dt)
            norms.append(np.sqrt(integrate(grid, np.abs(psi) ** 2)))
            dens = polar_amplitude(grid, psi)
            means.append(expectation_position(grid, dens)[0])
            if grid.dim == 1:
                variances.append(_position_variance(grid, dens))
            if snapshots is not None:
                snapshots.append((k * sc.dt, psi.copy()))
        if k == K:
            break
        dW = bank.increments(sc.dt)[0]
        dWs[k] = dW
        psi = step_grw_continuous(grid, psi, stepper, G, dW, sc.dt)
        if not np.any(G):
            ref = stepper.step(ref, sc.dt)
            identical = identical and np.array_equal(psi, ref)
    rep.series("norm", ts, norms)
    rep.series("mean_x", ts, means)
    rep.check("norm_error", float(np.max(np.abs(np.asarray(norms) - 1))), 1e-12)
    if not np.any(G):
        rep.check("bitwise_equal_to_unitary", float(identical), 1.0, "==")
        if grid.dim == 1 and _is_free_gaussian(sc):
            s = float(sc.initial.width[0])
            exact = np.array([free_packet_variance(s, t, sc.masses[0]) for t in ts])
            rep.check("width_law_rel_error", float(np.max(np.abs(np.asarray(variances) / exact - 1))), 1e-6)
    rep.paths["dW"] = dWs
    rep.wall_clock = time.perf_counter() - t0
    return rep


def run_grw_discrete(sc: ScenarioSpec, *, events: list | None = None) -> RunReport:
    """Replicas of the discrete-hit dynamics stepped with ``step_grw_discrete``."""
    from .grw import step_grw_discrete
    t0 = time.perf_counter()
    rep = RunReport("grw_discrete", sc.digest(), seed_manifest(sc.seed, "hits"))
    grid = sc.build_grid()
    params = GrwDiscreteParams(sc.collapse.lam, sc.collapse.sigma, sc.mass_spec())
    stepper = UnitaryStepper(grid, sc.potential_values(grid), sc.mass_spec(), kinetic=sc.kinetic)
    K = sc.steps()
    counts = np.zeros(sc.replicas)
    norms = []
    for r in range(sc.replicas):
        rng = seeded_rng(sc.seed, STREAMS["hits"], r)
        psi = sc.initial_psi(grid)
        for k in range(K):
            psi, evs = step_grw_discrete(grid, psi, stepper, params, k * sc.dt, sc.dt, rng)
            counts[r] += len(evs)
            if events is not None and r == 0:
                events.extend(evs)
        norms.append(np.sqrt(integrate(grid, np.abs(psi) ** 2)))
    expected = params.rates.sum() * K * sc.dt
    rep.values["mean_hits"] = float(counts.mean())
    rep.values["expected_hits"] = float(expected)
    rep.check("norm_error", float(np.max(np.abs(np.asarray(norms) - 1))), 1e-12)
    if expected > 0:
        z = abs(counts.sum() - expected * sc.replicas) / np.sqrt(expected * sc.replicas)
        rep.check("hit_count_z", float(z), 5.0)
    rep.wall_clock = time.perf_counter() - t0
    return rep


def run_bohm(sc: ScenarioSpec, *, trajectories: list | None = None, threads: int = 1) -> RunReport:
    """Equivariance of a quantum-equilibrium ensemble under the guiding equation (g = 0)."""
    t0 = time.perf_counter()
    rep = RunReport("bohm", sc.digest(), seed_manifest(sc.seed, "initial_positions"))
    grid = sc.build_grid()
    masses = sc.mass_spec()
    stepper = UnitaryStepper(grid, sc.potential_values(grid), masses, kinetic=sc.kinetic)
    psi0 = sc.initial_psi(grid)
    dens0 = polar_amplitude(grid, psi0)
    N = sc.replicas
    X0 = np.stack([sample_point(grid, dens0, seeded_rng(sc.seed, STREAMS["initial_positions"], r))
                   for r in range(N)])
    K = sc.steps()
    symmetric = sc.initial.kind == "two_gaussian" and sc.initial.p0 == 0.5 and grid.dim == 1
    out_steps = sorted({int(round(t / sc.dt)) for t in sc.output_times} | {0, K})
    rec = range(K + 1) if symmetric else out_steps
    ts, pos, _ = propagate_ensemble(grid, X0, psi0, masses, stepper.step, sc.horizon, sc.dt,
                                    [k * sc.dt for k in rec])
    index = {int(round(t / sc.dt)): j for j, t in enumerate(ts)}
    # |psi_t|^2 from a separate unitary run taking the same half steps
    psi = psi0
    l1 = []
    for k in range(K + 1):
        if k in out_steps:
            l1.append(l1_distance(grid, histogram_density(grid, pos[index[k]]), polar_amplitude(grid, psi)))
        if k < K:
            psi = stepper.step(stepper.step(psi, sc.dt / 2), sc.dt / 2)
    l1 = np.asarray(l1)
    out_t = np.asarray(out_steps) * sc.dt
    rep.series("equivariance_l1", out_t, l1)
    rep.values["sampling_floor"] = sampling_floor(grid, N)
    rep.values["l1_t0"] = float(l1[0])
    rep.check("equivariance_l1_over_t0", float(np.max(l1) / l1[0]), 3.0)
    if symmetric:
        axis = float(np.atleast_1d(sc.initial.center)[0])
        side0 = np.sign(pos[0][:, 0] - axis)
        crossings = int(np.sum(np.any(np.sign(pos[:, :, 0] - axis) != side0, axis=0)))
        rep.values["axis_crossings"] = crossings
        rep.check("axis_crossings", crossings, 0, "<=")
    if trajectories is not None:
        sel = [index[k] for k in out_steps]
        trajectories.extend([ts[sel], pos[sel]])
    rep.wall_clock = time.perf_counter() - t0
    return rep
