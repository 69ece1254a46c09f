"""Approximations of the nonlinear (McKean-Vlasov) dynamics

    dX = sqrt(2) dB + b(X) dt - (K * rho_t)(X) dt,   rho_t = law(X_t),

by a mollified self-interacting M-ensemble and by damped Picard iteration on a
grid, plus the synchronous-coupling chaos experiment.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _pairs
from .grid import Convolver, DensityGrid2D, offset_mesh
from .kernels import ConfigError, ConfinementSpec, KernelSpec, confinement_drift, eval_kernel, mollified_kernel
from .particles import (
    SimConfig,
    StateError,
    Trajectory,
    integrate,
    interaction_batch,
    kernel_interaction,
    make_rng,
    pair_stats,
    tame,
)
from .pde2d import CFLError, FaceFluxes, apply_fluxes, fit_slope

METHODS = ("auto", "pairwise", "mesh")


@dataclass
class McKeanConfig(SimConfig):
    """SimConfig for an M-sample ensemble; N is ignored in favour of M.

    mollifier_delta defaults to M^(-1/(d+4)). The mesh method (2D only) deposits
    the ensemble on a node grid of spacing mesh_h (default delta/3) and convolves
    with the mollified kernel by FFT; pair diagnostics are skipped above
    pair_stats_max samples.
    """

    M: int = 1000
    mollifier_delta: float | None = None
    method: str = "auto"
    mesh_h: float | None = None
    pairwise_max: int = 4096
    pair_stats_max: int = 4096

    def __post_init__(self):
        super().__post_init__()
        if self.M < 2:
            raise ConfigError("mckean: M must be >= 2")
        if self.mollifier_delta is None:
            self.mollifier_delta = self.M ** (-1.0 / (self.d + 4))
        if not self.mollifier_delta > 0:
            raise ConfigError("mckean: mollifier_delta must be > 0")
        if self.method not in METHODS:
            raise ConfigError(f"mckean: method must be one of {METHODS}")
        if self.method == "mesh" and self.d != 2:
            raise ConfigError("mckean: mesh method needs d = 2")
        if self.mesh_h is not None and not self.mesh_h > 0:
            raise ConfigError("mckean: mesh_h must be > 0")

    @property
    def uses_mesh(self) -> bool:
        if self.method == "auto":
            return self.d == 2 and self.M > self.pairwise_max
        return self.method == "mesh"

    @property
    def grid_h(self) -> float:
        return self.mesh_h if self.mesh_h is not None else self.mollifier_delta / 3


def derive_seed(base: int, *keys: int) -> int:
    """Independent 64-bit seed for a sub-experiment."""
    ss = np.random.SeedSequence([int(base), *map(int, keys)])
    return int(ss.generate_state(1, np.uint64)[0])


# -- particle-mesh field ---------------------------------------------------


@lru_cache(maxsize=4)
def _mesh_convolvers(kernel: KernelSpec, delta: float, n: int, h: float):
    A, B = offset_mesh(n, n, h)
    Kd = mollified_kernel(kernel, np.stack([A, B], axis=-1), delta)
    Kd[0, 0] = 0.0
    return Convolver(Kd[..., 0], n, n, h), Convolver(Kd[..., 1], n, n, h)


@dataclass
class MeshField:
    """Node-centred vector field values[i, j] at (origin + i h, origin + j h)."""

    values: np.ndarray
    origin: float
    h: float

    def __call__(self, X: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(X.reshape(-1, 2))
        out = np.empty_like(pts)
        _pairs.bilinear(self.values, pts, self.origin, self.origin, self.h, out)
        return out.reshape(X.shape)


def mesh_field(X: np.ndarray, kernel: KernelSpec, delta: float, h: float) -> MeshField:
    """(1/M) sum_j (K * phi_delta)(. - x_j) on a square node grid covering X.

    The grid is centred at the origin and its size is rounded up to a multiple of
    32 nodes so that consecutive steps reuse the cached kernel spectrum.
    """
    X = np.ascontiguousarray(X, dtype=float)
    reach = float(np.max(np.abs(X))) + 4 * delta + 2 * h
    half = 32 * math.ceil(reach / (32 * h))
    n = 2 * half + 1
    origin = -half * h
    counts = np.zeros((n, n))
    _pairs.cic_deposit(X, origin, origin, h, n, n, counts)
    rho = counts / (X.shape[0] * h * h)
    values = np.zeros((n, n, 2))
    if kernel.chi != 0:
        cx, cy = _mesh_convolvers(kernel, float(delta), n, float(h))
        values[..., 0] = cx(rho)
        values[..., 1] = cy(rho)
    return MeshField(values, origin, h)


def mean_field_drift(samples: np.ndarray, kernel: KernelSpec, delta: float, probes: np.ndarray) -> np.ndarray:
    """(1/M) sum_j (K * phi_delta)(p - x_j) at probe points, by direct summation."""
    samples = np.asarray(samples, dtype=float)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    out = np.empty_like(probes)
    for k, p in enumerate(probes):
        out[k] = mollified_kernel(kernel, p - samples, delta).mean(axis=0)
    return out


# -- nonlinear ensemble ----------------------------------------------------


@dataclass
class McKeanRun:
    trajectory: Trajectory
    marginals: list
    method: str
    fields: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.t


def mckean_simulate(
    cfg: McKeanConfig,
    kernel: KernelSpec,
    conf: ConfinementSpec,
    init,
    *,
    keep_marginals: bool = True,
    keep_fields: bool = False,
) -> McKeanRun:
    """Run the M-ensemble with the mollified kernel K * phi_delta.

    Randomness follows ``simulate``: one Philox stream keyed by cfg.seed, initial
    sample first, then an (M, d) block per step. With keep_fields the mesh method
    stores the interaction field used at every step, which is what the chaos
    experiment replays as the frozen nonlinear drift.
    """
    if kernel.d != cfg.d:
        raise ConfigError(f"kernel dimension {kernel.d} does not match d={cfg.d}")
    M, d, dt = cfg.M, cfg.d, cfg.dt
    delta = float(cfg.mollifier_delta)
    use_mesh = cfg.uses_mesh
    if keep_fields and not use_mesh:
        raise ConfigError("mckean: keep_fields needs the mesh method")
    rng = make_rng(cfg.seed)
    X = np.asarray(init(rng, M, d), dtype=float).reshape(M, d)
    if not np.all(np.isfinite(X)):
        raise StateError("initial sampler produced non-finite positions")
    n_steps = cfg.n_steps
    n_rec = n_steps // cfg.record_every + 1
    t = np.empty(n_rec)
    m2 = np.empty((1, n_rec))
    stats = np.full((1, n_rec, 4), np.nan)
    marginals, fields = [], []
    tamed = np.zeros(1, dtype=np.int64)
    do_pairs = M <= cfg.pair_stats_max

    def record(r, time):
        t[r] = time
        m2[0, r] = float(np.sum(X * X))
        if do_pairs:
            stats[:, r] = pair_stats(X[None], cfg.neg_gamma, cfg.riesz_s)
        if keep_marginals:
            marginals.append(X.copy())

    record(0, 0.0)
    r = 1
    cap = cfg.cap
    sq = math.sqrt(2 * dt)
    for n in range(n_steps):
        noise = rng.standard_normal((M, d))
        if use_mesh:
            fld = mesh_field(X, kernel, delta, cfg.grid_h)
            inter = fld(X)
            if keep_fields:
                fields.append(fld)
        else:
            inter = interaction_batch(X, kernel, delta)
        drift = confinement_drift(conf, X) - inter
        if cap is not None:
            tamed[0] += int(np.sum(np.sum(drift * drift, axis=1) > cap * cap / dt))
        X = X + tame(drift, dt, cap) * dt + sq * noise
        if not np.all(np.abs(X) <= cfg.guard_radius):
            raise StateError(f"mckean ensemble left the guard ball at step {n + 1}")
        if (n + 1) % cfg.record_every == 0:
            record(r, (n + 1) * dt)
            r += 1
    traj = Trajectory(
        seeds=[cfg.seed],
        t=t,
        second_moment=m2,
        min_gap=stats[..., 0],
        neg_moment=stats[..., 1],
        log_gap_sum=stats[..., 2],
        riesz_H=stats[..., 3],
        final=X[None].copy(),
        tamed_rows=tamed,
    )
    return McKeanRun(traj, marginals, "mesh" if use_mesh else "pairwise", fields)


# -- propagation of chaos ---------------------------------------------------


CHAOS_HEADER = ("N", "error", "stderr")


@dataclass
class ChaosTable:
    N: list
    error: list
    stderr: list
    slope: float
    seeds: int

    def rows(self):
        return list(zip(self.N, self.error, self.stderr))


def _check_chaos_kernel(kernel: KernelSpec):
    if not kernel.bounded or kernel.regularization.kind == "hard_truncate":
        raise ConfigError("chaos: kernel must be bounded and Lipschitz (use eps or cap regularization)")


def chaos_experiment(
    N_list,
    cfg: McKeanConfig,
    kernel: KernelSpec,
    conf: ConfinementSpec,
    init,
    n_seeds: int = 100,
    reference: McKeanRun | None = None,
    seeds=None,
) -> ChaosTable:
    """E sup_t |X^{i,N} - Xbar^i| for each N under synchronous coupling.

    The N-particle system and N independent nonlinear copies share the initial
    sample and the Brownian increments. The copies are driven by the frozen
    interaction field of a single mesh McKean run with cfg.M samples. The error
    averages the per-particle sup over particles and seeds; stderr is over seeds.
    Without explicit ``seeds`` each N gets n_seeds seeds derived from cfg.seed.
    """
    _check_chaos_kernel(kernel)
    N_list = [int(n) for n in N_list]
    if not N_list or min(N_list) < 1:
        raise ConfigError("chaos: N_list must hold positive sizes")
    if reference is None:
        if kernel.chi == 0:
            reference = None
        else:
            ref_cfg = McKeanConfig(**{**cfg.__dict__, "method": "mesh"})
            reference = mckean_simulate(ref_cfg, kernel, conf, init, keep_marginals=False, keep_fields=True)
    fields = reference.fields if reference is not None else None
    if fields is not None and len(fields) < cfg.n_steps:
        raise ConfigError("chaos: reference run is shorter than the horizon")

    def nonlinear(X, n):
        if fields is None:
            return np.zeros_like(X)
        return fields[n](X)

    errors, stderrs = [], []
    for N in N_list:
        sim = SimConfig(
            N=N, d=cfg.d, dt=cfg.dt, T=cfg.T, seed=cfg.seed, taming_cap=cfg.taming_cap,
            tame=cfg.tame, record_every=cfg.n_steps, guard_radius=cfg.guard_radius,
        )
        run_seeds = list(seeds) if seeds is not None else [derive_seed(cfg.seed, N, k) for k in range(n_seeds)]
        cp = integrate(sim, [kernel_interaction(kernel), nonlinear], conf, init, run_seeds)
        per_seed = cp.sup_particle[0].mean(axis=1)
        errors.append(float(per_seed.mean()))
        S = len(run_seeds)
        stderrs.append(float(per_seed.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0)
    if len(N_list) > 1 and min(errors) > 0:
        slope = fit_slope(np.log(N_list), np.log(errors))
    else:
        slope = math.nan
    return ChaosTable(N_list, errors, stderrs, slope, len(run_seeds))


# -- grid Picard iteration ---------------------------------------------------


@lru_cache(maxsize=4)
def _grid_convolvers(kernel: KernelSpec, nx: int, ny: int, h: float):
    A, B = offset_mesh(nx, ny, h)
    with np.errstate(divide="ignore", invalid="ignore"):
        Kv = eval_kernel(kernel, np.stack([A, B], axis=-1))
    # odd kernels average to zero over the self-cell
    Kv[0, 0] = 0.0
    return Convolver(Kv[..., 0], nx, ny, h), Convolver(Kv[..., 1], nx, ny, h)


def convolve_field(rho: DensityGrid2D, kernel: KernelSpec) -> np.ndarray:
    """(K * rho)(x_k) = sum_l K(x_k - x_l) rho_l h^2 at every cell centre, shape (nx, ny, 2)."""
    if kernel.d != 2:
        raise ConfigError("convolve_field needs a 2D kernel")
    out = np.zeros((rho.nx, rho.ny, 2))
    if kernel.chi != 0:
        cx, cy = _grid_convolvers(kernel, rho.nx, rho.ny, float(rho.h))
        out[..., 0] = cx(rho.values)
        out[..., 1] = cy(rho.values)
    return out


def _confinement_faces(rho: DensityGrid2D, conf: ConfinementSpec):
    x, y = rho.axes()
    xf = 0.5 * (x[1:] + x[:-1])
    yf = 0.5 * (y[1:] + y[:-1])
    if conf.kind == "none":
        return np.zeros((rho.nx - 1, rho.ny)), np.zeros((rho.nx, rho.ny - 1))
    Xf, Yf = np.meshgrid(xf, y, indexing="ij")
    bx = confinement_drift(conf, np.stack([Xf, Yf], axis=-1))[..., 0]
    Xf, Yf = np.meshgrid(x, yf, indexing="ij")
    by = confinement_drift(conf, np.stack([Xf, Yf], axis=-1))[..., 1]
    return bx, by


def mean_field_velocities(rho: DensityGrid2D, kernel: KernelSpec, conf_faces):
    """Face velocities b - K * rho, the interaction averaged from adjacent cells."""
    F = convolve_field(rho, kernel)
    vx = conf_faces[0] - 0.5 * (F[1:, :, 0] + F[:-1, :, 0])
    vy = conf_faces[1] - 0.5 * (F[:, 1:, 1] + F[:, :-1, 1])
    return vx, vy


@dataclass
class DensityFlow:
    times: list
    grids: list

    def at(self, t: float) -> DensityGrid2D:
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.grids[k]


@dataclass
class PicardResult:
    flow: DensityFlow
    residual: float
    iterations: int
    converged: bool
    residuals: list


def _solve_linear(rho0: DensityGrid2D, drive, kernel, conf_faces, dt, n_steps, scheme):
    """Linear Fokker-Planck flow with the interaction frozen along ``drive``."""
    out = [rho0.values]
    rho = rho0
    for n in range(n_steps):
        vx, vy = mean_field_velocities(rho0.like(drive[n]), kernel, conf_faces)
        fluxes = FaceFluxes.build(vx, vy, rho0.h, scheme)
        if dt > fluxes.dt_max * (1 + 1e-12):
            raise CFLError(f"dt = {dt:.3g} exceeds the positivity limit {fluxes.dt_max:.3g} at step {n}")
        rho = apply_fluxes(rho, fluxes, dt)
        out.append(rho.values)
    return out


def picard_grid(
    rho0: DensityGrid2D,
    kernel: KernelSpec,
    conf: ConfinementSpec,
    T: float,
    dt: float,
    tol: float = 1e-4,
    max_iter: int = 50,
    omega: float = 0.5,
    record_every: int = 1,
    scheme: str = "sg",
) -> PicardResult:
    """Damped Picard iteration rho^(m+1) = (1 - omega) rho^(m) + omega solve(rho^(m)).

    solve(rho^(m)) is the linear Fokker-Planck flow whose drift b - K * rho^(m)_t is
    frozen along the previous iterate; the first iterate is the constant flow rho0.
    Stops once sup_t TV(rho^(m+1)_t, rho^(m)_t) < tol. When chi = 0 the drift does
    not depend on rho, so one undamped solve is exact. Non-convergence returns the
    last iterate with converged = False and a RuntimeWarning.
    """
    if kernel.d != 2:
        raise ConfigError("picard_grid needs a 2D kernel")
    if not (T > 0 and dt > 0 and tol > 0 and max_iter >= 1 and 0 < omega <= 1):
        raise ConfigError("picard: need T, dt, tol > 0, max_iter >= 1 and 0 < omega <= 1")
    mass = rho0.mass
    if abs(mass - 1) > 1e-8:
        raise ConfigError(f"picard: rho0 has mass {mass:.12g}, expected 1")
    n_steps = int(math.ceil(T / dt - 1e-9))
    cell = rho0.h**2
    faces = _confinement_faces(rho0, conf)
    current = [rho0.values] * (n_steps + 1)
    residuals = []
    converged = False
    linear = kernel.chi == 0
    it = 0
    for it in range(1, max_iter + 1):
        solved = _solve_linear(rho0, current, kernel, faces, dt, n_steps, scheme)
        w = 1.0 if linear else omega
        nxt = [(1 - w) * a + w * b for a, b in zip(current, solved)] if w < 1 else solved
        res = max(0.5 * float(np.abs(a - b).sum()) * cell for a, b in zip(nxt, current))
        residuals.append(res)
        current = nxt
        if linear or res < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"picard iteration stopped at residual {residuals[-1]:.3g} after {it} iterations",
            RuntimeWarning,
            stacklevel=2,
        )
    keep = list(range(0, n_steps + 1, record_every))
    if keep[-1] != n_steps:
        keep.append(n_steps)
    flow = DensityFlow([k * dt for k in keep], [rho0.like(current[k]) for k in keep])
    return PicardResult(flow, 0.0 if linear else residuals[-1], it, converged, residuals)
