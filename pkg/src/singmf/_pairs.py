"""Compiled O(N^2) pair loops.

Each target row is accumulated over sources in ascending index order by a single
worker, so results do not depend on how rows are split across threads.
"""
import math

import numba
import numpy as np
from numba import njit, prange

COLLISION_GAP = 1e-12


def set_threads(n: int) -> int:
    """Set the compiled-loop thread count, clamped to what the runtime allows."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


@njit(cache=True, inline="always")
def _scale(r2, fam, chi, p, reg, regval):
    """Radial factor f with K(z) = f * z (or f * z_perp for Biot-Savart)."""
    if r2 == 0.0:
        return 0.0
    den2 = r2 + regval if reg == 1 else r2
    if p == 2.0:
        f = chi / den2
    elif p == 3.0:
        f = chi / (den2 * math.sqrt(den2))
    else:
        f = chi / den2 ** (0.5 * p)
    if reg >= 2:
        r = math.sqrt(r2)
        if abs(f) * r > regval:
            if reg == 2:
                f = math.copysign(regval / r, f)
            else:
                f = 0.0
    return f


@njit(cache=True, inline="always")
def _accumulate(z, d, fam, chi, p, reg, regval, w, acc):
    r2 = 0.0
    for k in range(d):
        r2 += z[k] * z[k]
    f = w * _scale(r2, fam, chi, p, reg, regval)
    if fam == 1:
        acc[0] -= f * z[1]
        acc[1] += f * z[0]
    else:
        for k in range(d):
            acc[k] += f * z[k]


@njit(cache=True, parallel=True)
def interaction(X, fam, chi, p, reg, regval, delta, closed, nodes, weights, out):
    """out[s, i] = (1/N) sum_j K_delta(X[s, i] - X[s, j]) for every seed s.

    delta = 0 uses K itself. With delta > 0 the mollified kernel is either the
    closed form K(z)(1 - exp(-|z|^2 / 2 delta^2)) (closed=True) or the
    Gauss-Hermite rule (nodes, weights).
    """
    S, N, d = X.shape
    inv_n = 1.0 / N
    for t in prange(S * N):
        s = t // N
        i = t - s * N
        acc = np.zeros(d)
        z = np.empty(d)
        for j in range(N):
            if j == i:
                continue
            for k in range(d):
                z[k] = X[s, i, k] - X[s, j, k]
            if delta == 0.0:
                _accumulate(z, d, fam, chi, p, reg, regval, 1.0, acc)
            elif closed:
                r2 = 0.0
                for k in range(d):
                    r2 += z[k] * z[k]
                w = -math.expm1(-r2 / (2.0 * delta * delta))
                _accumulate(z, d, fam, chi, p, reg, regval, w, acc)
            else:
                zq = np.empty(d)
                for q in range(weights.shape[0]):
                    for k in range(d):
                        zq[k] = z[k] - delta * nodes[q, k]
                    _accumulate(zq, d, fam, chi, p, reg, regval, weights[q], acc)
        for k in range(d):
            out[s, i, k] = acc[k] * inv_n


@njit(cache=True, parallel=True)
def pair_stats(X, gamma, s_exp, out):
    """Per seed: min gap, sum |dx|^-gamma, -sum ln|dx|^2, sum |dx|^-s over ordered pairs.

    A gap below COLLISION_GAP makes the three singular sums +inf.
    """
    S, N, d = X.shape
    for s in prange(S):
        gmin = math.inf
        neg = 0.0
        lg = 0.0
        rh = 0.0
        for i in range(N):
            for j in range(i + 1, N):
                r2 = 0.0
                for k in range(d):
                    dz = X[s, i, k] - X[s, j, k]
                    r2 += dz * dz
                r = math.sqrt(r2)
                if r < gmin:
                    gmin = r
                if r < COLLISION_GAP:
                    neg = math.inf
                    lg = math.inf
                    rh = math.inf
                else:
                    neg += 2.0 * r ** (-gamma)
                    lg -= 2.0 * math.log(r2)
                    rh += 2.0 * r ** (-s_exp)
        if N < 2:
            gmin = math.inf
        out[s, 0] = gmin
        out[s, 1] = neg
        out[s, 2] = lg
        out[s, 3] = rh


@njit(cache=True)
def cic_deposit(X, ox, oy, h, nx, ny, grid):
    """Cloud-in-cell deposit of unit-weight points onto grid nodes (ox + i h, oy + j h)."""
    M = X.shape[0]
    for m in range(M):
        fx = (X[m, 0] - ox) / h
        fy = (X[m, 1] - oy) / h
        i = int(math.floor(fx))
        j = int(math.floor(fy))
        ax = fx - i
        ay = fy - j
        if i < 0 or j < 0 or i + 1 >= nx or j + 1 >= ny:
            continue
        grid[i, j] += (1 - ax) * (1 - ay)
        grid[i + 1, j] += ax * (1 - ay)
        grid[i, j + 1] += (1 - ax) * ay
        grid[i + 1, j + 1] += ax * ay


@njit(cache=True, parallel=True)
def bilinear(field, X, ox, oy, h, out):
    """Bilinear interpolation of a node-centred vector field (nx, ny, 2) at points X."""
    nx, ny = field.shape[0], field.shape[1]
    for m in prange(X.shape[0]):
        fx = (X[m, 0] - ox) / h
        fy = (X[m, 1] - oy) / h
        i = int(math.floor(fx))
        j = int(math.floor(fy))
        if i < 0 or j < 0 or i + 1 >= nx or j + 1 >= ny:
            out[m, 0] = 0.0
            out[m, 1] = 0.0
            continue
        ax = fx - i
        ay = fy - j
        for k in range(2):
            out[m, k] = (
                (1 - ax) * (1 - ay) * field[i, j, k]
                + ax * (1 - ay) * field[i + 1, j, k]
                + (1 - ax) * ay * field[i, j + 1, k]
                + ax * ay * field[i + 1, j + 1, k]
            )
