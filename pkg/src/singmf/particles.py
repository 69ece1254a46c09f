"""Euler-Maruyama integration of the N-particle system

    dX^i = sqrt(2) dB^i + b(X^i) dt - (1/N) sum_j K(X^i - X^j) dt

with per-step drift taming and pairwise diagnostics.

Seeds are run in batches: positions have shape (S, N, d) and every seed owns an
independent Philox stream (see ``make_rng``). The initial sample is drawn first,
then one (N, d) Gaussian block per step, so a seed's trajectory does not depend
on which other seeds share its batch or on the thread count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _pairs
from .kernels import (
    FAMILY_CODE,
    REG_CODE,
    ConfigError,
    ConfinementSpec,
    KernelSpec,
    confinement_drift,
    eval_kernel,
    gauss_hermite_nodes,
)

CSV_HEADER = ("t", "second_moment", "min_gap", "neg_moment", "log_gap_sum", "riesz_H")


class StateError(ValueError):
    """Non-finite particle state."""


class ExplosionError(RuntimeError):
    """A coordinate left the guard ball; ``report`` describes where and when."""

    def __init__(self, report: dict, partial=None):
        super().__init__(
            f"explosion: |x| = {report['max_abs']:.3g} > {report['guard_radius']:.3g}"
            f" at t = {report['t']:.6g} (seed {report['seed']})"
        )
        self.report = report
        self.partial = partial


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


# -- initial samplers ------------------------------------------------------


@dataclass(frozen=True)
class GaussianInit:
    scale: float = 1.0

    def __call__(self, rng, N, d):
        return self.scale * rng.standard_normal((N, d))


@dataclass(frozen=True)
class UniformInit:
    half_width: float = 1.0

    def __call__(self, rng, N, d):
        return rng.uniform(-self.half_width, self.half_width, size=(N, d))


@dataclass(frozen=True)
class LatticeInit:
    """Deterministic centred cubic lattice; consumes no random numbers."""

    spacing: float = 1.0

    def __call__(self, rng, N, d):
        side = math.ceil(N ** (1.0 / d) - 1e-9)
        axes = [np.arange(side, dtype=float)] * d
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)[:N]
        return self.spacing * (pts - pts.mean(axis=0))


# -- state and config ------------------------------------------------------


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[0] < 1:
            raise StateError("ensemble needs at least one particle")

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


@dataclass
class SimConfig:
    N: int
    d: int
    dt: float
    T: float
    seed: int = 0
    taming_cap: float | None = None
    tame: bool = True
    record_every: int = 1
    guard_radius: float = 1e8
    neg_gamma: float = 1.0
    riesz_s: float = 1.0

    def __post_init__(self):
        if self.N < 1 or self.d < 1:
            raise ConfigError("sim: N and d must be >= 1")
        if not (self.dt > 0 and self.T > 0):
            raise ConfigError("sim: dt and T must be > 0")
        if self.dt > self.T * (1 + 1e-12):
            raise ConfigError("sim: dt must not exceed T")
        if self.record_every < 1 or self.record_every * self.dt > self.T * (1 + 1e-12):
            raise ConfigError("sim: record_every must be >= 1 with record_every*dt <= T")
        if self.taming_cap is not None and not self.taming_cap > 0:
            raise ConfigError("sim: taming_cap must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("sim: seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.dt - 1e-9))

    @property
    def cap(self) -> float | None:
        """Taming level r0 (per-step drift norm limit is r0 / sqrt(dt))."""
        if not self.tame:
            return None
        return self.taming_cap if self.taming_cap is not None else 2.0 * math.sqrt(self.d)


@dataclass
class DiagnosticRecord:
    t: float
    second_moment: float
    min_gap: float
    neg_moment: float
    log_gap_sum: float
    riesz_H: float
    collision: bool = False

    def row(self):
        return tuple(getattr(self, k) for k in CSV_HEADER)


# -- drift -----------------------------------------------------------------


def _kernel_args(kernel: KernelSpec, delta: float = 0.0, order: int = 8):
    reg = kernel.regularization
    closed = reg.kind == "none" and (kernel.is_keller_segel or kernel.family == "biot_savart")
    if delta > 0 and not closed:
        nodes, weights = gauss_hermite_nodes(kernel.d, order)
    else:
        nodes, weights = np.zeros((1, kernel.d)), np.ones(1)
    return (
        FAMILY_CODE[kernel.family],
        float(kernel.chi),
        float(kernel.exponent),
        REG_CODE[reg.kind],
        float(reg.value),
        float(delta),
        closed,
        nodes,
        weights,
    )


def interaction_batch(X: np.ndarray, kernel: KernelSpec, delta: float = 0.0) -> np.ndarray:
    """(1/N) sum_j K(x_i - x_j) for positions of shape (S, N, d) or (N, d)."""
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 2
    X3 = np.ascontiguousarray(X[None] if squeeze else X)
    if X3.shape[-1] != kernel.d:
        raise ConfigError(f"kernel dimension {kernel.d} does not match d={X3.shape[-1]}")
    out = np.empty_like(X3)
    if kernel.chi != 0:
        _pairs.interaction(X3, *_kernel_args(kernel, delta), out)
    else:
        out[:] = 0.0
    return out[0] if squeeze else out


def interaction_reference(X: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Brute-force numpy version of ``interaction_batch`` for a single (N, d) state."""
    diff = X[:, None, :] - X[None, :, :]
    return eval_kernel(kernel, diff).sum(axis=1) / X.shape[0]


def total_drift(ens: ParticleEnsemble, kernel: KernelSpec, conf: ConfinementSpec) -> np.ndarray:
    X = ens.positions
    if not np.all(np.isfinite(X)):
        raise StateError("non-finite particle position")
    return confinement_drift(conf, X) - interaction_batch(X, kernel)


def tame(drift: np.ndarray, dt: float, cap: float | None) -> np.ndarray:
    """Rescale rows whose norm exceeds cap / sqrt(dt) onto that norm."""
    if cap is None:
        return drift
    limit = cap / math.sqrt(dt)
    norm = np.sqrt(np.sum(drift * drift, axis=-1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norm > limit, limit / norm, 1.0)
    return drift * factor


def step(ens: ParticleEnsemble, drift, dt: float, noise, taming_cap: float | None = None):
    x = ens.positions + tame(np.asarray(drift, float), dt, taming_cap) * dt
    x = x + math.sqrt(2 * dt) * np.asarray(noise, float)
    return ParticleEnsemble(x, ens.t + dt)


# -- diagnostics -----------------------------------------------------------


def pair_stats(X: np.ndarray, gamma: float, s: float) -> np.ndarray:
    """Columns: min_gap, neg_moment, log_gap_sum, riesz_H. X has shape (S, N, d)."""
    X3 = np.ascontiguousarray(X, dtype=float)
    out = np.empty((X3.shape[0], 4))
    _pairs.pair_stats(X3, float(gamma), float(s), out)
    return out


def pair_functionals(ens: ParticleEnsemble, gamma: float, s: float) -> DiagnosticRecord:
    X = ens.positions
    st = pair_stats(X[None], gamma, s)[0]
    return DiagnosticRecord(
        t=ens.t,
        second_moment=float(np.sum(X * X)),
        min_gap=float(st[0]),
        neg_moment=float(st[1]),
        log_gap_sum=float(st[2]),
        riesz_H=float(st[3]),
        collision=bool(st[0] < _pairs.COLLISION_GAP),
    )


@dataclass
class Trajectory:
    """Diagnostic streams for a batch of seeds; arrays are (S, n_records)."""

    seeds: list
    t: np.ndarray
    second_moment: np.ndarray
    min_gap: np.ndarray
    neg_moment: np.ndarray
    log_gap_sum: np.ndarray
    riesz_H: np.ndarray
    final: np.ndarray
    tamed_rows: np.ndarray
    virial: np.ndarray | None = None
    virial_scale: np.ndarray | None = None
    snapshots: list = field(default_factory=list)

    @property
    def collision(self) -> np.ndarray:
        return self.min_gap < _pairs.COLLISION_GAP

    def records(self, k: int = 0) -> list[DiagnosticRecord]:
        return [
            DiagnosticRecord(
                float(self.t[r]),
                float(self.second_moment[k, r]),
                float(self.min_gap[k, r]),
                float(self.neg_moment[k, r]),
                float(self.log_gap_sum[k, r]),
                float(self.riesz_H[k, r]),
                bool(self.min_gap[k, r] < _pairs.COLLISION_GAP),
            )
            for r in range(len(self.t))
        ]

    def ensemble(self, k: int = 0) -> ParticleEnsemble:
        return ParticleEnsemble(self.final[k].copy(), float(self.t[-1]))


class _Recorder:
    def __init__(self, S, n_rec, cfg, track_virial, n_steps, keep_snapshots):
        self.cfg = cfg
        self.t = np.empty(n_rec)
        self.m2 = np.empty((S, n_rec))
        self.stats = np.empty((S, n_rec, 4))
        self.k = 0
        self.virial = np.empty((S, n_steps)) if track_virial else None
        self.vscale = np.empty((S, n_steps)) if track_virial else None
        self.keep = keep_snapshots
        self.snaps = []
        self.tamed = np.zeros(S, dtype=np.int64)

    def record(self, t, X):
        self.t[self.k] = t
        self.m2[:, self.k] = np.sum(X * X, axis=(1, 2))
        self.stats[:, self.k] = pair_stats(X, self.cfg.neg_gamma, self.cfg.riesz_s)
        if self.keep:
            self.snaps.append(X.copy())
        self.k += 1

    def result(self, seeds, X):
        st = self.stats[:, : self.k]
        return Trajectory(
            seeds=list(seeds),
            t=self.t[: self.k].copy(),
            second_moment=self.m2[:, : self.k].copy(),
            min_gap=st[..., 0].copy(),
            neg_moment=st[..., 1].copy(),
            log_gap_sum=st[..., 2].copy(),
            riesz_H=st[..., 3].copy(),
            final=X.copy(),
            tamed_rows=self.tamed.copy(),
            virial=self.virial,
            virial_scale=self.vscale,
            snapshots=self.snaps,
        )


InteractionFn = Callable[[np.ndarray, int], np.ndarray]


def kernel_interaction(kernel: KernelSpec, delta: float = 0.0) -> InteractionFn:
    args = _kernel_args(kernel, delta)

    def fn(X, k):
        out = np.empty_like(X)
        if kernel.chi == 0:
            out[:] = 0.0
        else:
            _pairs.interaction(X, *args, out)
        return out

    return fn


def integrate(
    cfg: SimConfig,
    interactions: Sequence[InteractionFn],
    conf: ConfinementSpec,
    init,
    seeds: Sequence[int] | None = None,
    *,
    noise_substeps: int = 1,
    track_virial: bool = False,
    keep_snapshots: bool = False,
) -> "Coupling":
    """Step several systems in lockstep with shared initial sample and noise.

    ``interactions[m](X, step)`` returns the interaction term (1/N) sum_j K for
    system m; the drift is confinement minus that term. With noise_substeps = m
    each step uses (z_1 + ... + z_m) / sqrt(m) built from m consecutive draws,
    which reproduces the Brownian path of a run with step dt / m.

    Returns a Coupling with the trajectories, the running sup over time of
    max_i |X^{i,0} - X^{i,m}| at each record (n_systems - 1, S, n_records), and the
    per-particle sup over the whole run (n_systems - 1, S, N).
    """
    seeds = [cfg.seed] if seeds is None else [int(s) for s in seeds]
    S, N, d = len(seeds), cfg.N, cfg.d
    rngs = [make_rng(s) for s in seeds]
    X0 = np.empty((S, N, d))
    for k, rng in enumerate(rngs):
        X0[k] = init(rng, N, d)
    if not np.all(np.isfinite(X0)):
        raise StateError("initial sampler produced non-finite positions")
    systems = [X0.copy() for _ in interactions]
    n_steps = cfg.n_steps
    n_rec = n_steps // cfg.record_every + 1
    recs = [
        _Recorder(S, n_rec, cfg, track_virial and m == 0, n_steps, keep_snapshots)
        for m in range(len(interactions))
    ]
    sup = np.zeros((max(len(interactions) - 1, 0), S, N))
    sup_rec = np.zeros((max(len(interactions) - 1, 0), S, n_rec))
    cap = cfg.cap
    sq = math.sqrt(2 * cfg.dt)
    for m, rec in enumerate(recs):
        rec.record(0.0, systems[m])
    r = 1
    for n in range(n_steps):
        noise = np.empty((S, N, d))
        for k, rng in enumerate(rngs):
            if noise_substeps == 1:
                noise[k] = rng.standard_normal((N, d))
            else:
                z = rng.standard_normal((noise_substeps, N, d))
                noise[k] = z.sum(axis=0) / math.sqrt(noise_substeps)
        for m, fn in enumerate(interactions):
            X = systems[m]
            inter = fn(X, n)
            if recs[m].virial is not None:
                recs[m].virial[:, n] = np.sum(X * inter, axis=(1, 2))
                recs[m].vscale[:, n] = np.sum(
                    np.sqrt(np.sum(X * X, axis=2)) * np.sqrt(np.sum(inter * inter, axis=2)),
                    axis=1,
                )
            drift = confinement_drift(conf, X) - inter
            tamed = tame(drift, cfg.dt, cap)
            if cap is not None:
                recs[m].tamed += np.sum(
                    np.sum(drift * drift, axis=2) > cap * cap / cfg.dt, axis=1
                )
            X += tamed * cfg.dt + sq * noise
            big = np.max(np.abs(X), axis=(1, 2))
            if not np.all(big <= cfg.guard_radius):
                bad = int(np.argmax(~(big <= cfg.guard_radius)))
                report = {
                    "seed": seeds[bad],
                    "step": n + 1,
                    "t": (n + 1) * cfg.dt,
                    "max_abs": float(big[bad]),
                    "guard_radius": cfg.guard_radius,
                    "system": m,
                }
                raise ExplosionError(report, recs[m].result(seeds, X))
        for m in range(1, len(systems)):
            dist = np.sqrt(np.sum((systems[0] - systems[m]) ** 2, axis=2))
            np.maximum(sup[m - 1], dist, out=sup[m - 1])
        if (n + 1) % cfg.record_every == 0:
            for m, rec in enumerate(recs):
                rec.record((n + 1) * cfg.dt, systems[m])
            sup_rec[:, :, r] = sup.max(axis=2) if N else 0.0
            r += 1
    trajs = [rec.result(seeds, systems[m]) for m, rec in enumerate(recs)]
    return Coupling(trajs, sup_rec, sup)


@dataclass
class Coupling:
    trajectories: list
    sup_record: np.ndarray
    sup_particle: np.ndarray


def simulate_batch(cfg, kernel, conf, init, seeds=None, **kw) -> Trajectory:
    return integrate(cfg, [kernel_interaction(kernel)], conf, init, seeds, **kw).trajectories[0]


def simulate(cfg: SimConfig, kernel: KernelSpec, conf: ConfinementSpec, init):
    """Single-seed run: (list of DiagnosticRecord, final ParticleEnsemble)."""
    traj = simulate_batch(cfg, kernel, conf, init)
    return traj.records(0), traj.ensemble(0)


@dataclass
class CoupledResult:
    a: Trajectory
    b: Trajectory
    sup_distance: np.ndarray  # (S, n_records), running max_i sup_u |X^a - X^b|


def coupled_simulate(cfg, kernel_a, kernel_b, conf, init, seeds=None) -> CoupledResult:
    if kernel_a.d != kernel_b.d:
        raise ConfigError("coupled kernels must share d")
    cp = integrate(
        cfg, [kernel_interaction(kernel_a), kernel_interaction(kernel_b)], conf, init, seeds
    )
    return CoupledResult(cp.trajectories[0], cp.trajectories[1], cp.sup_record[0])


def diffusion_paths(drift, x0: np.ndarray, dt: float, n_steps: int, rng) -> np.ndarray:
    """Euler paths of dX = drift(t, X) dt + sqrt(2) dB; returns (M, n_steps + 1, d)."""
    x = np.array(x0, dtype=float)
    out = np.empty((x.shape[0], n_steps + 1, x.shape[1]))
    out[:, 0] = x
    sq = math.sqrt(2 * dt)
    for n in range(n_steps):
        x = x + drift(n * dt, x) * dt + sq * rng.standard_normal(x.shape)
        out[:, n + 1] = x
    return out
