"""Estimators for entropy, Fisher information, drift-energy relative entropy,
total variation, Wasserstein-1 and chaos gaps."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize, stats

from .grid import DensityGrid1D, DensityGrid2D


@dataclass
class SampleSet:
    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        self.points = p[:, None] if p.ndim == 1 else p
        if not np.all(np.isfinite(self.points)):
            raise ValueError("samples must be finite")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
                raise ValueError("weights must be nonnegative and sum to 1")
            self.weights = w

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass
class EntropyEstimate:
    value: float
    stderr: float
    method: str
    bandwidth: float | None = None


def _as_samples(s) -> SampleSet:
    return s if isinstance(s, SampleSet) else SampleSet(np.asarray(s, dtype=float))


def silverman_bandwidth(points: np.ndarray, weights=None) -> np.ndarray:
    """Per-axis sigma_hat * M^(-1/(d+4))."""
    M, d = points.shape
    if weights is None:
        sd = points.std(axis=0, ddof=1)
    else:
        mean = weights @ points
        sd = np.sqrt(weights @ (points - mean) ** 2)
    return sd * M ** (-1.0 / (d + 4))


def _linear_bin(points, weights, lo, h, shape):
    """Linear (cloud-in-cell) binning onto cell centres lo + k h; returns counts."""
    d = points.shape[1]
    f = (points - lo) / h
    base = np.floor(f).astype(np.int64)
    frac = f - base
    out = np.zeros(int(np.prod(shape)))
    strides = np.array([int(np.prod(shape[k + 1 :])) for k in range(d)])
    for corner in range(2**d):
        bits = np.array([(corner >> k) & 1 for k in range(d)])
        idx = base + bits
        w = np.prod(np.where(bits, frac, 1 - frac), axis=1)
        if weights is not None:
            w = w * weights
        ok = np.all((idx >= 0) & (idx < np.array(shape)), axis=1)
        out += np.bincount(idx[ok] @ strides, weights=w[ok], minlength=out.size)
    return out.reshape(shape)


def _smooth(counts, bandwidth_cells):
    return ndimage.gaussian_filter(counts, sigma=bandwidth_cells, mode="constant", truncate=5.0)


def kde(samples, bandwidth=None, grid=None, h=None, max_cells=512):
    """Gaussian KDE on a grid (d = 1 or 2), normalized to mass 1.

    Samples are linearly binned and the bins smoothed with a sampled Gaussian.
    Without ``grid`` the box spans the data plus 5 bandwidths and the cell width
    defaults to a quarter of the smallest bandwidth.
    """
    s = _as_samples(samples)
    if s.M < 2:
        raise ValueError("kde needs at least 2 samples")
    if s.d not in (1, 2):
        raise ValueError("kde supports d = 1 or 2")
    if bandwidth is None:
        bw = silverman_bandwidth(s.points, s.weights)
    else:
        bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (s.d,)).copy()
    if not np.all(bw > 0):
        raise ValueError("bandwidth must be positive")
    if grid is None:
        lo = s.points.min(axis=0) - 5 * bw
        hi = s.points.max(axis=0) + 5 * bw
        if h is None:
            h = max(bw.min() / 4, float(np.max(hi - lo)) / max_cells)
        n = np.ceil((hi - lo) / h).astype(int) + 1
        if s.d == 1:
            grid = DensityGrid1D(int(n[0]), h, float(lo[0]), np.zeros(int(n[0])))
        else:
            grid = DensityGrid2D(int(n[0]), int(n[1]), h, (lo[0], lo[1]), np.zeros((n[0], n[1])))
    if s.d == 1:
        lo = np.array([grid.origin])
        shape = (grid.n,)
    else:
        lo = np.array(grid.origin)
        shape = (grid.nx, grid.ny)
    counts = _linear_bin(s.points, s.weights, lo, grid.h, shape)
    dens = _smooth(counts, bw / grid.h)
    total = dens.sum() * grid.cell_volume
    if total <= 0:
        raise ValueError("no sample mass landed on the grid")
    out = grid.like(dens / total)
    out.bandwidth = bw
    return out


def _interp(grid, pts):
    if isinstance(grid, DensityGrid1D):
        coords = ((pts[:, 0] - grid.origin) / grid.h)[None]
    else:
        coords = np.stack(
            [(pts[:, 0] - grid.origin[0]) / grid.h, (pts[:, 1] - grid.origin[1]) / grid.h]
        )
    return ndimage.map_coordinates(grid.values, coords, order=1, mode="constant")


def entropy(obj, bandwidth=None, batches: int = 20) -> EntropyEstimate:
    """int rho ln rho: grid sum (0 ln 0 = 0), or KDE resubstitution for samples."""
    if isinstance(obj, (DensityGrid1D, DensityGrid2D)):
        v = obj.values[obj.values > 0]
        return EntropyEstimate(float(np.sum(v * np.log(v)) * obj.cell_volume), 0.0, "kde_grid")
    s = _as_samples(obj)
    g = kde(s, bandwidth)
    dens = _interp(g, s.points)
    logs = np.log(np.maximum(dens, np.finfo(float).tiny))
    chunks = np.array_split(logs, batches)
    means = np.array([c.mean() for c in chunks])
    stderr = float(means.std(ddof=1) / math.sqrt(batches))
    return EntropyEstimate(float(logs.mean()), stderr, "resubstitution", float(np.mean(g.bandwidth)))


def fisher(grid) -> float:
    """sum |grad rho|^2 / rho * cell by centred differences, zero where rho = 0."""
    v = grid.values
    grads = np.gradient(v, grid.h)
    if isinstance(grid, DensityGrid1D):
        grads = [grads]
    g2 = sum(g * g for g in grads)
    pos = v > 0
    return float(np.sum(g2[pos] / v[pos]) * grid.cell_volume)


@dataclass
class DriftEnergy:
    value: float
    stderr: float
    excluded: int
    paths: int


def relative_entropy_drift(paths, v, u, dt: float, H0: float = 0.0) -> DriftEnergy:
    """H0 + (1/4) E sum_n |v - u|^2(t_n, X_n) dt along paths of shape (M, n+1, d).

    v and u map (t, x[M, d]) to drifts [M, d]. Paths with a non-finite drift gap
    are dropped and counted.
    """
    paths = np.asarray(paths, dtype=float)
    M, n1, _ = paths.shape
    acc = np.zeros(M)
    for n in range(n1 - 1):
        x = paths[:, n]
        gap = np.asarray(v(n * dt, x)) - np.asarray(u(n * dt, x))
        with np.errstate(invalid="ignore", over="ignore"):
            acc += np.sum(gap * gap, axis=1) * dt
    ok = np.isfinite(acc)
    excluded = int(M - ok.sum())
    if excluded > 0.01 * M:
        warnings.warn(f"{excluded} of {M} paths excluded for non-finite drift")
    if not ok.any():
        return DriftEnergy(math.nan, math.nan, excluded, M)
    e = 0.25 * acc[ok]
    stderr = float(e.std(ddof=1) / math.sqrt(e.size)) if e.size > 1 else 0.0
    return DriftEnergy(H0 + float(e.mean()), stderr, excluded, M)


def tv_grid(rho1, rho2) -> float:
    if not rho1.same_geometry(rho2):
        raise ValueError("grids differ in geometry")
    return float(0.5 * np.sum(np.abs(rho1.values - rho2.values)) * rho1.cell_volume)


def relative_entropy_grid(rho1, rho2) -> float:
    """H(rho1 | rho2) by grid sum; +inf when rho1 charges a cell where rho2 = 0."""
    a, b = rho1.values, rho2.values
    pos = a > 0
    if np.any(b[pos] <= 0):
        return math.inf
    return float(np.sum(a[pos] * np.log(a[pos] / b[pos])) * rho1.cell_volume)


@dataclass
class PinskerResult:
    tv: float
    entropy_bound: float
    satisfied: bool
    infinite_entropy: bool
    relative_entropy: float


def pinsker_gap(rho1, rho2) -> PinskerResult:
    tv = tv_grid(rho1, rho2)
    H = relative_entropy_grid(rho1, rho2)
    if math.isinf(H):
        return PinskerResult(tv, math.inf, True, True, H)
    bound = math.sqrt(2 * max(H, 0.0))
    return PinskerResult(tv, bound, tv <= bound + 1e-10, False, H)


def w1(samples1, samples2, projections: int = 64, exact_max: int = 256) -> float:
    """Wasserstein-1: exact in 1D, assignment for small 2D sets, sliced otherwise."""
    a = _as_samples(samples1).points
    b = _as_samples(samples2).points
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("empty sample set")
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    if a.shape[1] == 1:
        return _w1_1d(a[:, 0], b[:, 0])
    if a.shape[0] == b.shape[0] and a.shape[0] <= exact_max:
        cost = np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))
        r, c = optimize.linear_sum_assignment(cost)
        return float(cost[r, c].mean())
    if a.shape[1] != 2:
        raise ValueError("sliced W1 is implemented for d = 2")
    theta = np.pi * np.arange(projections) / projections
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return float(np.mean([_w1_1d(a @ u, b @ u) for u in dirs]))


def _w1_1d(x, y):
    if x.size == y.size:
        return float(np.mean(np.abs(np.sort(x) - np.sort(y))))
    return float(stats.wasserstein_distance(x, y))


@dataclass
class ChaosGap:
    gap: float
    baseline: float
    net: float
    stderr: float


def _kde_nd(points, bw, lo, h, shape):
    counts = _linear_bin(points, None, lo, h, shape)
    dens = _smooth(counts, bw / h)
    return dens / (dens.sum() * h ** points.shape[1])


def _joint_vs_product(pairs, d, bw, lo, h, shape):
    joint = _kde_nd(pairs, bw, lo, h, shape)
    m1 = _kde_nd(pairs[:, :d], bw[:d], lo[:d], h, shape[:d])
    m2 = _kde_nd(pairs[:, d:], bw[d:], lo[d:], h, shape[d:])
    prod = np.multiply.outer(m1, m2)
    return float(0.5 * np.sum(np.abs(joint - prod)) * h ** (2 * d))


def chaos_gap(pairs, seed: int = 0, n_baseline: int = 5, bandwidth=None) -> ChaosGap:
    """TV between the joint KDE of (X1, X2) and the product of marginal KDEs.

    The baseline is the same statistic after pairing X1 with a random permutation
    of X2, which removes any dependence but keeps the finite-sample KDE bias.
    """
    pairs = np.asarray(pairs, dtype=float)
    M, dd = pairs.shape
    if dd % 2 or dd // 2 not in (1, 2):
        raise ValueError("pairs must have 2 or 4 columns")
    d = dd // 2
    # one bandwidth per axis, shared by both coordinates so the grids coincide,
    # scaled for the joint dimension 2d
    pooled = np.concatenate([pairs[:, :d], pairs[:, d:]])
    bw1 = pooled.std(axis=0, ddof=1) * M ** (-1.0 / (dd + 4))
    if bandwidth is not None:
        bw1 = np.broadcast_to(np.asarray(bandwidth, float), (d,)).copy()
    bw = np.concatenate([bw1, bw1])
    lo1 = pooled.min(axis=0) - 4 * bw1
    hi1 = pooled.max(axis=0) + 4 * bw1
    h = float(bw1.min()) / (2.0 if d == 1 else 1.5)
    n1 = np.ceil((hi1 - lo1) / h).astype(int) + 1
    lo = np.concatenate([lo1, lo1])
    shape = tuple(int(v) for v in np.concatenate([n1, n1]))
    gap = _joint_vs_product(pairs, d, bw, lo, h, shape)
    rng = np.random.default_rng(seed)
    base = []
    for _ in range(n_baseline):
        shuffled = np.concatenate([pairs[:, :d], pairs[rng.permutation(M), d:]], axis=1)
        base.append(_joint_vs_product(shuffled, d, bw, lo, h, shape))
    base = np.array(base)
    stderr = float(base.std(ddof=1) * math.sqrt(1 + 1 / n_baseline)) if n_baseline > 1 else 0.0
    return ChaosGap(gap, float(base.mean()), gap - float(base.mean()), stderr)
