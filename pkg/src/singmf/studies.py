"""Desk-scale studies behind the acceptance suite and the experiment scripts.

Each function runs one numerical experiment at fixed parameters and returns a
flat dict of measured quantities; thresholds live with the callers.
"""
from __future__ import annotations

import math
import time

import numpy as np
from scipy.integrate import trapezoid

from . import bounds, estimators
from .grid import DensityGrid2D
from .kernels import ConfinementSpec, KernelSpec, log_partition_1d
from .meanfield import McKeanConfig, chaos_experiment, mckean_simulate, picard_grid
from .particles import (
    GaussianInit,
    LatticeInit,
    SimConfig,
    integrate,
    kernel_interaction,
    simulate_batch,
)
from .pde2d import fit_slope, run_ks

FREE = ConfinementSpec()
SMOOTH_KERNEL = KernelSpec.keller_segel(1.0).regularized("eps", 1.0)  # x / (1 + |x|^2)


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        out["seconds"] = time.perf_counter() - t0
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _seeds(base: int, n: int) -> list:
    return [base + k for k in range(n)]


def _virial_ratio(traj) -> float:
    """max |sum_i <x_i, interaction_i>| relative to sum_i |x_i| |interaction_i|."""
    scale = np.maximum(traj.virial_scale, np.finfo(float).tiny)
    return float(np.max(np.abs(traj.virial) / scale))


# -- particle identities -----------------------------------------------------


@_timed
def vortex_moment(N=64, dt=1e-3, T=1.0, n_seeds=200, seed=1000, record_every=10):
    cfg = SimConfig(N=N, d=2, dt=dt, T=T, seed=seed, record_every=record_every)
    traj = simulate_batch(
        cfg, KernelSpec.biot_savart(1.0), FREE, GaussianInit(1.0), _seeds(seed, n_seeds), track_virial=True
    )
    slope = fit_slope(traj.t, traj.second_moment.mean(axis=0))
    return {
        "slope": slope,
        "expected": 4.0 * N,
        "rel_error": abs(slope / (4.0 * N) - 1),
        "virial_ratio": _virial_ratio(traj),
        "tamed_rows": int(traj.tamed_rows.sum()),
    }


@_timed
def ks_moment(N=50, chi=1.0, dt=1e-3, T=1.0, n_seeds=200, seed=2000, record_every=10):
    """Slope of mean sum |x_i|^2 against 4N - chi (N - 1), plus the pathwise virial."""
    cfg = SimConfig(N=N, d=2, dt=dt, T=T, seed=seed, record_every=record_every)
    traj = simulate_batch(
        cfg, KernelSpec.keller_segel(chi), FREE, GaussianInit(1.0), _seeds(seed, n_seeds), track_virial=True
    )
    slope = fit_slope(traj.t, traj.second_moment.mean(axis=0))
    expected = 4.0 * N - chi * (N - 1)
    virial_target = chi * (N - 1) / 2
    return {
        "slope": slope,
        "expected": expected,
        "rel_error": abs(slope / expected - 1),
        "per_particle_slope": slope / N,
        "mean_field_rel_error": abs(slope / N / (4.0 - chi) - 1),
        "virial_rel_error": float(np.max(np.abs(traj.virial / virial_target - 1))),
        "tamed_rows": int(traj.tamed_rows.sum()),
    }


@_timed
def dyson_identity(Ns=(4, 16, 64), chi_per_N=-2.0, dt=1e-3, T=0.2, n_seeds=4, seed=3000):
    """sum_i x_i sum_{j != i} 1/(x_i - x_j) = N(N - 1)/2 along every path."""
    worst = {}
    for N in Ns:
        chi = chi_per_N * N
        cfg = SimConfig(N=N, d=1, dt=dt, T=T, seed=seed)
        traj = simulate_batch(
            cfg, KernelSpec.dyson(chi), ConfinementSpec.quadratic(1.0), LatticeInit(1.0),
            _seeds(seed, n_seeds), track_virial=True,
        )
        # virial = (chi / N) sum_i x_i sum_j 1/(x_i - x_j)
        pair_sum = traj.virial * N / chi
        target = N * (N - 1) / 2
        worst[N] = float(np.max(np.abs(pair_sum / target - 1)))
    return {"rel_error": max(worst.values()), "per_N": worst}


@_timed
def dyson_gaps(N=16, T=2.0, dt=2.5e-4, n_seeds=100, seed=4000, regimes=(-2.0, -0.2), quantile=0.01):
    """Per-seed minimum over time of the smallest gap, q-quantile across seeds."""
    out = {}
    for chi_per_N in regimes:
        cfg = SimConfig(N=N, d=1, dt=dt, T=T, seed=seed, record_every=1)
        traj = simulate_batch(
            cfg, KernelSpec.dyson(chi_per_N * N), ConfinementSpec.quadratic(1.0), LatticeInit(0.5),
            _seeds(seed, n_seeds),
        )
        per_seed = traj.min_gap.min(axis=1)
        out[chi_per_N] = {
            "q": float(np.quantile(per_seed, quantile)),
            "median": float(np.median(per_seed)),
            "tamed_rows": int(traj.tamed_rows.sum()),
        }
    return {"regimes": out}


@_timed
def riesz_monotonicity(N=32, s=1.0, chi=-1.0, dt=1e-3, T=1.0, n_seeds=400, seed=5000, record_every=50):
    """Largest rise of mean riesz_H between consecutive records, in paired standard errors."""
    cfg = SimConfig(N=N, d=3, dt=dt, T=T, seed=seed, record_every=record_every, riesz_s=s)
    traj = simulate_batch(cfg, KernelSpec.riesz(chi, s, 3), FREE, GaussianInit(1.0), _seeds(seed, n_seeds))
    H = traj.riesz_H
    inc = np.diff(H, axis=1)
    mean = inc.mean(axis=0)
    se = inc.std(axis=0, ddof=1) / math.sqrt(n_seeds)
    z = mean / np.maximum(se, np.finfo(float).tiny)
    return {
        "max_rise_in_se": float(z.max()),
        "H_start": float(H[:, 0].mean()),
        "H_end": float(H[:, -1].mean()),
    }


@_timed
def ks_negative_moment(N=32, chi=1.0, gamma=1.4, dt=2e-3, T=1.0, n_seeds=100, seed=6000):
    """Time integral of mean neg_moment at dt and dt/2 on the same Brownian paths."""
    kern = KernelSpec.keller_segel(chi)
    seeds = _seeds(seed, n_seeds)
    coarse = SimConfig(N=N, d=2, dt=dt, T=T, seed=seed, neg_gamma=gamma)
    fine = SimConfig(N=N, d=2, dt=dt / 2, T=T, seed=seed, neg_gamma=gamma, record_every=2)
    a = integrate(coarse, [kernel_interaction(kern)], FREE, GaussianInit(1.0), seeds, noise_substeps=2).trajectories[0]
    b = integrate(fine, [kernel_interaction(kern)], FREE, GaussianInit(1.0), seeds).trajectories[0]
    Ia = float(trapezoid(a.neg_moment.mean(axis=0), a.t))
    Ib = float(trapezoid(b.neg_moment.mean(axis=0), b.t))
    return {
        "integral_dt": Ia,
        "integral_half_dt": Ib,
        "rel_change": abs(Ia - Ib) / abs(Ib),
        "finite": bool(math.isfinite(Ia) and math.isfinite(Ib)),
    }


# -- PDE ---------------------------------------------------------------------


@_timed
def pde_dissipation(chi=2.0, h=1 / 64, T=0.5, sigma2=0.15, half_width=5.0, potential_every=8, record_dt=0.025):
    rho = DensityGrid2D.gaussian(math.sqrt(sigma2), h, half_width=half_width)
    run = run_ks(rho, chi, FREE, T, record_dt, safety=1.0, potential_every=potential_every)
    t = np.array([p.t for p in run.trace])
    F = np.array([p.F for p in run.trace])
    m2 = np.array([p.m2 for p in run.trace])
    slope = fit_slope(t, m2)
    return {
        "F_max_rate": float(np.max(np.diff(F) / np.diff(t))),
        "mass_drift": float(max(abs(p.mass - run.trace[0].mass) for p in run.trace)),
        "slope": slope,
        "slope_rel_error": abs(slope / (4 - chi) - 1),
        "boundary_mass": float(max(p.boundary_mass for p in run.trace)),
        "steps": run.steps,
    }


@_timed
def pde_blowup(chi=6.0, h=1 / 64, T=0.6, sigma2=0.5, half_width=5.0, potential_every=8, record_dt=0.01, guard=0.05):
    """m2(0) = 2 sigma2 = 1; linf guard is guard / h^2."""
    rho = DensityGrid2D.gaussian(math.sqrt(sigma2), h, half_width=half_width)
    run = run_ks(
        rho, chi, FREE, T, record_dt, safety=1.0, potential_every=potential_every,
        linf_guard=guard / h**2, stop_on_blowup=True,
    )
    rep = run.alarm
    return {
        "m20": run.trace[0].m2,
        "slope": rep.slope,
        "slope_rel_error": abs(rep.slope / rep.expected_slope - 1),
        "blown_up": rep.blown_up,
        "alarm_time": rep.alarm_time,
        "reason": rep.reason,
        "zero_crossing_estimate": rep.zero_crossing_estimate,
        "blowup_time_bound": rep.blowup_time_bound,
        "boundary_mass": float(max(p.boundary_mass for p in run.trace)),
        "steps": run.steps,
    }


# -- mean field ----------------------------------------------------------------


@_timed
def chaos_rate(N_list=(16, 32, 64, 128), n_seeds=100, T=1.0, dt=0.01, M=200_000, seed=7000):
    cfg = McKeanConfig(N=1, d=2, dt=dt, T=T, seed=seed, M=M, mollifier_delta=0.05, mesh_h=0.05, method="mesh")
    tab = chaos_experiment(N_list, cfg, SMOOTH_KERNEL, FREE, GaussianInit(1.0), n_seeds=n_seeds)
    return {"slope": tab.slope, "N": tab.N, "error": tab.error, "stderr": tab.stderr}


@_timed
def cross_method(chi=1.0, T=0.5, h=1 / 16, half_width=7.0, M=100_000, dt_particles=5e-3, seed=8000, tol=1e-4):
    """TV between the Picard grid flow and a KDE of the M-ensemble at time T."""
    kern = KernelSpec.keller_segel(chi)
    rho0 = DensityGrid2D.gaussian(1.0, h, half_width=half_width)
    dt = 0.9 * h * h / (4 + 4 * h)
    pic = picard_grid(rho0, kern, FREE, T, dt, tol=tol, max_iter=40, record_every=10**9)
    cfg = McKeanConfig(N=1, d=2, dt=dt_particles, T=T, seed=seed, M=M, record_every=int(round(T / dt_particles)))
    run = mckean_simulate(cfg, kern, FREE, GaussianInit(1.0))
    final = pic.flow.grids[-1]
    est = estimators.kde(run.marginals[-1], grid=final)
    m2 = [g.second_moment() for g in pic.flow.grids]
    return {
        "tv": estimators.tv_grid(est, final),
        "picard_iterations": pic.iterations,
        "picard_residual": pic.residual,
        "picard_converged": pic.converged,
        "picard_m2_rel_error": abs((m2[-1] - m2[0]) / ((4 - chi) * T) - 1),
        "mckean_method": run.method,
        "boundary_mass": final.boundary_mass(),
    }


# -- estimators and bounds -------------------------------------------------------


def _gauss2(sigma, h, mean=(0.0, 0.0), half_width=None):
    return DensityGrid2D.gaussian(sigma, h, half_width=half_width, mean=mean)


def _mixture(h, centres, sigmas, weights, half_width=6.0):
    def f(X, Y):
        out = np.zeros_like(X)
        for (cx, cy), s, w in zip(centres, sigmas, weights):
            out += w * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * s * s)) / (2 * math.pi * s * s)
        return out

    return DensityGrid2D.from_function(f, half_width, h)


@_timed
def estimator_suite(h=1 / 32):
    g = _gauss2(1.0, h)
    ent = estimators.entropy(g).value
    fis = estimators.fisher(g)
    family = [_gauss2(s, h * min(s, 1.0)) for s in (0.5, 1.0, 2.0)]
    mixtures = [
        _mixture(h, [(-1.0, 0.0), (1.0, 0.5)], [0.6, 0.8], [0.5, 0.5]),
        _mixture(h, [(0.0, 0.0), (2.0, -1.0), (-1.5, 1.5)], [1.0, 0.5, 0.7], [0.5, 0.3, 0.2]),
    ]
    grids = family + mixtures

    pinsker = []
    for a, b in [(g, _gauss2(1.0, h, mean=(0.5, 0.0), half_width=g.nx * h / 2)), (mixtures[0], mixtures[1]), (g, mixtures[0])]:
        b = b if a.same_geometry(b) else a.like(_resample(b, a))
        pinsker.append(estimators.pinsker_gap(a, b).satisfied)
    lsi = [bounds.logsobolev_check(x).satisfied for x in grids]
    gn = [bounds.gn_check(x, 2.0).satisfied for x in family]
    # V(u) = u^2 / 2 gives the standard Gaussian as the equality case
    lnZ = log_partition_1d("half_square")
    X, Y = g.mesh()
    moment = float(np.sum(0.5 * (X * X + Y * Y) * g.values) * h * h)
    lower = bounds.entropy_lower(moment, lnZ, 2)
    lower_abs = []
    for x in grids:
        Xm, Ym = x.mesh()
        mom = float(np.sum((np.abs(Xm) + np.abs(Ym)) * x.values) * x.h**2)
        lower_abs.append(estimators.entropy(x).value >= bounds.entropy_lower(mom, math.log(2.0), 2))
    return {
        "entropy_error": abs(ent + math.log(2 * math.pi * math.e)),
        "fisher_rel_error": abs(fis / 2.0 - 1),
        "pinsker_all": all(pinsker),
        "logsobolev_all": all(lsi),
        "gn_all": all(gn),
        "entropy_lower_gap": abs(ent - lower),
        "entropy_lower_all": all(lower_abs) and ent >= lower - 1e-6,
    }


def _resample(src: DensityGrid2D, like: DensityGrid2D) -> np.ndarray:
    """Evaluate ``src`` at the cell centres of ``like`` by bilinear interpolation."""
    from scipy.ndimage import map_coordinates

    X, Y = like.mesh()
    coords = np.stack([(X - src.origin[0]) / src.h, (Y - src.origin[1]) / src.h])
    vals = map_coordinates(src.values, coords, order=1, mode="constant", cval=0.0)
    return vals / (vals.sum() * like.h**2)


@_timed
def hierarchy(N=100, k=1, T=1.0, n_seeds=2000, dt=0.01, M=200_000, seed=9000, chi=2.0):
    """Formula checks plus the Monte Carlo marginal TV against the reverse bound.

    The kernel chi x / (1 + |x|^2) has sup norm chi / 2, so chi = 2 gives ||K|| = 1.
    """
    out = {}
    g = 1.0
    out["A_base"] = bounds.lacker_coefficients(3, 2, 1.0, g).A
    out["B_base_error"] = abs(bounds.lacker_coefficients(2, 2, 1.0, 1.0).B - math.exp(-1.0))
    ode = bounds.lacker_coefficients(2, 2, 1.0, 1.0, closed_form=False)
    out["one_level_error"] = max(abs(ode.A - (1 - math.exp(-1.0))), abs(ode.B - math.exp(-1.0)))
    chain = bounds.lacker_coefficients(1, 3, 1.0, 1.0)
    out["chain_residual"] = chain.residual

    kern = KernelSpec.keller_segel(chi).regularized("eps", 1.0)
    p = bounds.HierarchyParams.bounded_kernel(kern, T, k, N)
    rev = bounds.lacker_reverse_bound(p)
    out["reverse_bound"] = rev
    out["tv_bound"] = math.sqrt(2 * rev)

    sim = SimConfig(N=N, d=2, dt=dt, T=T, seed=seed, record_every=int(round(T / dt)))
    traj = simulate_batch(sim, kern, FREE, GaussianInit(1.0), _seeds(seed, n_seeds))
    # every particle has the same one-particle marginal; pool them
    pooled = traj.final.reshape(-1, 2)
    mcfg = McKeanConfig(N=1, d=2, dt=dt, T=T, seed=seed + 10**6, M=M, mollifier_delta=0.05, mesh_h=0.05, method="mesh",
                        record_every=int(round(T / dt)))
    ref = mckean_simulate(mcfg, kern, FREE, GaussianInit(1.0))
    lo = float(min(pooled.min(), ref.marginals[-1].min())) - 1.0
    hi = float(max(pooled.max(), ref.marginals[-1].max())) + 1.0
    hgrid = 0.05
    n = int(math.ceil((hi - lo) / hgrid)) + 1
    grid = DensityGrid2D(n, n, hgrid, (lo, lo), np.zeros((n, n)))
    bw = 0.15
    a = estimators.kde(pooled, bandwidth=bw, grid=grid)
    b = estimators.kde(ref.marginals[-1], bandwidth=bw, grid=grid)
    out["mc_tv"] = estimators.tv_grid(a, b)
    return out
