"""Uniform density grids, grid files and zero-padded FFT convolution."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft as sfft

# mean of ln|u| over the square [-1/2, 1/2]^2
LOG_CELL_AVERAGE = math.pi / 4 - 1.5 - 0.5 * math.log(2.0)

FFT_WORKERS = 1


@dataclass
class DensityGrid2D:
    """Cell-centred density: values[i, j] lives at (ox + i h, oy + j h)."""

    nx: int
    ny: int
    h: float
    origin: tuple
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.nx, self.ny):
            raise ValueError(f"grid values have shape {self.values.shape}, expected {(self.nx, self.ny)}")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    d = 2

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.h**2)

    @property
    def cell_volume(self) -> float:
        return self.h**2

    def axes(self):
        ox, oy = self.origin
        return ox + self.h * np.arange(self.nx), oy + self.h * np.arange(self.ny)

    def mesh(self):
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="ij")

    def points(self) -> np.ndarray:
        X, Y = self.mesh()
        return np.stack([X, Y], axis=-1)

    def like(self, values) -> "DensityGrid2D":
        return DensityGrid2D(self.nx, self.ny, self.h, self.origin, values)

    def normalized(self) -> "DensityGrid2D":
        return self.like(self.values / (self.values.sum() * self.h**2))

    def same_geometry(self, other) -> bool:
        return (
            isinstance(other, DensityGrid2D)
            and (self.nx, self.ny) == (other.nx, other.ny)
            and math.isclose(self.h, other.h, rel_tol=1e-12)
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12 * self.h)
        )

    def second_moment(self) -> float:
        X, Y = self.mesh()
        return float(np.sum((X * X + Y * Y) * self.values) * self.h**2)

    def boundary_mass(self) -> float:
        v = self.values
        ring = v[0].sum() + v[-1].sum() + v[1:-1, 0].sum() + v[1:-1, -1].sum()
        return float(ring * self.h**2)

    @classmethod
    def box(cls, half_width: float, h: float, center=(0.0, 0.0)) -> "DensityGrid2D":
        """Zero grid on the square [c - L, c + L]^2 with cells of width h."""
        n = int(math.ceil(2 * half_width / h))
        ox = center[0] - 0.5 * (n - 1) * h
        oy = center[1] - 0.5 * (n - 1) * h
        return cls(n, n, h, (ox, oy), np.zeros((n, n)))

    @classmethod
    def from_function(cls, f, half_width, h, center=(0.0, 0.0), normalize=True):
        g = cls.box(half_width, h, center)
        X, Y = g.mesh()
        g = g.like(f(X, Y))
        return g.normalized() if normalize else g

    @classmethod
    def gaussian(cls, sigma: float, h: float, half_width=None, mean=(0.0, 0.0), normalize=True):
        """Isotropic N(mean, sigma^2 I) sampled at cell centres.

        The default box keeps the mass outside below 1e-8 (half width 6 sigma).
        """
        if half_width is None:
            half_width = gaussian_box(sigma)
        mx, my = mean

        def f(X, Y):
            r2 = (X - mx) ** 2 + (Y - my) ** 2
            return np.exp(-r2 / (2 * sigma**2)) / (2 * math.pi * sigma**2)

        return cls.from_function(f, half_width, h, mean, normalize)


@dataclass
class DensityGrid1D:
    n: int
    h: float
    origin: float
    values: np.ndarray

    d = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n,):
            raise ValueError("grid values do not match n")

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.h)

    @property
    def cell_volume(self) -> float:
        return self.h

    def axis(self):
        return self.origin + self.h * np.arange(self.n)

    def like(self, values) -> "DensityGrid1D":
        return DensityGrid1D(self.n, self.h, self.origin, values)

    def normalized(self) -> "DensityGrid1D":
        return self.like(self.values / (self.values.sum() * self.h))

    def same_geometry(self, other) -> bool:
        return (
            isinstance(other, DensityGrid1D)
            and self.n == other.n
            and math.isclose(self.h, other.h, rel_tol=1e-12)
            and abs(self.origin - other.origin) <= 1e-12 * self.h
        )

    @classmethod
    def from_function(cls, f, lo, hi, h, normalize=True):
        n = int(math.ceil((hi - lo) / h))
        g = cls(n, h, lo + 0.5 * h, np.zeros(n))
        g = g.like(f(g.axis()))
        return g.normalized() if normalize else g


def gaussian_box(sigma: float, tol: float = 1e-8) -> float:
    """Half width L such that N(0, sigma^2 I_2) puts less than tol outside [-L, L]^2."""
    from scipy.special import ndtri

    # P(outside) <= 2 P(|Z| > L / sigma) = 4 Phi(-L / sigma)
    return float(-ndtri(tol / 4) * sigma)


# -- grid files ------------------------------------------------------------


def write_grid(grid: DensityGrid2D, path) -> None:
    """CSV matrix; first line holds nx,ny,h,ox,oy."""
    path = Path(path)
    lines = [
        ",".join(
            [str(grid.nx), str(grid.ny)] + [f"{v:.17g}" for v in (grid.h, *grid.origin)]
        )
    ]
    for row in grid.values:
        lines.append(",".join(f"{v:.17g}" for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_grid(path) -> DensityGrid2D:
    with open(path) as fh:
        head = fh.readline().strip().split(",")
        nx, ny = int(head[0]), int(head[1])
        h, ox, oy = (float(v) for v in head[2:5])
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    return DensityGrid2D(nx, ny, h, (ox, oy), values.reshape(nx, ny))


# -- convolution -----------------------------------------------------------


def padded_shape(nx: int, ny: int) -> tuple:
    return sfft.next_fast_len(2 * nx - 1, real=True), sfft.next_fast_len(2 * ny - 1, real=True)


def offset_mesh(nx: int, ny: int, h: float):
    """Displacements (a h, b h) for a in [-(nx-1), nx-1], arranged for circular FFT."""
    px, py = padded_shape(nx, ny)
    a = np.arange(px)
    b = np.arange(py)
    a = np.where(a < nx, a, a - px)
    b = np.where(b < ny, b, b - py)
    A, B = np.meshgrid(a * h, b * h, indexing="ij")
    return A, B


class Convolver:
    """Discrete convolution (G * f)(x_k) = sum_l G(x_k - x_l) f_l h^2 on a fixed grid."""

    def __init__(self, kernel_values: np.ndarray, nx: int, ny: int, h: float):
        self.nx, self.ny, self.h = nx, ny, h
        self.shape = padded_shape(nx, ny)
        self.spectrum = sfft.rfft2(kernel_values * h * h, s=self.shape, workers=FFT_WORKERS)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        F = sfft.rfft2(f, s=self.shape, workers=FFT_WORKERS)
        out = sfft.irfft2(F * self.spectrum, s=self.shape, workers=FFT_WORKERS)
        return out[: self.nx, : self.ny]


@lru_cache(maxsize=8)
def log_convolver(nx: int, ny: int, h: float) -> Convolver:
    A, B = offset_mesh(nx, ny, h)
    r2 = A * A + B * B
    with np.errstate(divide="ignore"):
        G = 0.5 * np.log(r2)
    G[0, 0] = math.log(h) + LOG_CELL_AVERAGE
    return Convolver(G, nx, ny, h)
