"""Finite-volume solver for the 2D parabolic-elliptic Keller-Segel equation

    d rho/dt = Lap rho + chi div(rho grad c) + div(rho grad U~),   c = ln|.| * rho,

so the transport velocity is -chi grad c - grad U~. The same flux kernel serves
the linear Fokker-Planck steps of the Picard iteration in ``meanfield``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .grid import DensityGrid2D, log_convolver
from .kernels import ConfinementSpec, confinement_drift

TRACE_HEADER = ("t", "mass", "m2", "entropy", "F", "D", "linf")
SCHEMES = ("sg", "upwind")


class CFLError(ValueError):
    """Time step exceeds the positivity limit."""


class PositivityError(RuntimeError):
    """A step produced a negative density (should be impossible under the CFL limit)."""


def concentration(rho: DensityGrid2D) -> np.ndarray:
    """c(x) = sum_y ln|x - y| rho(y) h^2, self-cell replaced by the cell average of ln|.|."""
    return log_convolver(rho.nx, rho.ny, rho.h)(rho.values)


def face_velocities(rho: DensityGrid2D, chi: float, conf: ConfinementSpec, c=None):
    """Normal velocities -chi dc/dn - dU~/dn on interior faces: (nx-1, ny) and (nx, ny-1)."""
    h = rho.h
    x, y = rho.axes()
    vx = np.zeros((rho.nx - 1, rho.ny))
    vy = np.zeros((rho.nx, rho.ny - 1))
    if chi != 0:
        if c is None:
            c = concentration(rho)
        vx -= chi * np.diff(c, axis=0) / h
        vy -= chi * np.diff(c, axis=1) / h
    if conf.kind != "none":
        xf = 0.5 * (x[1:] + x[:-1])
        yf = 0.5 * (y[1:] + y[:-1])
        Xf, Yf = np.meshgrid(xf, y, indexing="ij")
        vx += confinement_drift(conf, np.stack([Xf, Yf], axis=-1))[..., 0]
        Xf, Yf = np.meshgrid(x, yf, indexing="ij")
        vy += confinement_drift(conf, np.stack([Xf, Yf], axis=-1))[..., 1]
    return vx, vy


def stable_dt(h: float, vx: np.ndarray, vy: np.ndarray) -> float:
    """Largest dt keeping the explicit update positive.

    The diagonal coefficient of cell i is 1 - dt/h^2 (4 + h * s_i) with s_i the sum of
    |v| over its four faces, for both the upwind and the Scharfetter-Gummel flux.
    """
    s = np.zeros((vx.shape[0] + 1, vy.shape[1] + 1))
    ax, ay = np.abs(vx), np.abs(vy)
    s[1:, :] += ax
    s[:-1, :] += ax
    s[:, 1:] += ay
    s[:, :-1] += ay
    return h * h / (4.0 + h * float(s.max()))


@njit(cache=True)
def _coefficients(v, h, sg, a, b):
    """Face flux = a * rho_left - b * rho_right.

    Scharfetter-Gummel: a = B(-z)/h, b = B(z)/h with B(z) = z/(e^z - 1), z = v h
    (using B(-z) = B(z) + z). Upwind: a = v+ + 1/h, b = v- + 1/h.
    """
    flat_v = v.ravel()
    flat_a = a.ravel()
    flat_b = b.ravel()
    for k in range(flat_v.size):
        vk = flat_v[k]
        if sg:
            z = vk * h
            if abs(z) < 1e-8:
                bz = 1.0 - 0.5 * z
            else:
                bz = z / math.expm1(z)
            flat_a[k] = (bz + z) / h
            flat_b[k] = bz / h
        else:
            flat_a[k] = max(vk, 0.0) + 1.0 / h
            flat_b[k] = max(-vk, 0.0) + 1.0 / h


@njit(cache=True, parallel=True)
def _apply(rho, ax, bx, ay, by, lam, out):
    nx, ny = rho.shape
    for i in prange(nx):
        for j in range(ny):
            div = 0.0
            r = rho[i, j]
            if i + 1 < nx:
                div += ax[i, j] * r - bx[i, j] * rho[i + 1, j]
            if i > 0:
                div -= ax[i - 1, j] * rho[i - 1, j] - bx[i - 1, j] * r
            if j + 1 < ny:
                div += ay[i, j] * r - by[i, j] * rho[i, j + 1]
            if j > 0:
                div -= ay[i, j - 1] * rho[i, j - 1] - by[i, j - 1] * r
            out[i, j] = r - lam * div


@dataclass
class FaceFluxes:
    """Precomputed flux coefficients for frozen face velocities."""

    ax: np.ndarray
    bx: np.ndarray
    ay: np.ndarray
    by: np.ndarray
    dt_max: float

    @classmethod
    def build(cls, vx, vy, h, scheme="sg"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        sg = scheme == "sg"
        ax, bx = np.empty_like(vx), np.empty_like(vx)
        ay, by = np.empty_like(vy), np.empty_like(vy)
        _coefficients(np.ascontiguousarray(vx), h, sg, ax, bx)
        _coefficients(np.ascontiguousarray(vy), h, sg, ay, by)
        return cls(ax, bx, ay, by, stable_dt(h, vx, vy))


def apply_fluxes(rho: DensityGrid2D, fluxes: FaceFluxes, dt: float) -> DensityGrid2D:
    out = np.empty_like(rho.values)
    _apply(rho.values, fluxes.ax, fluxes.bx, fluxes.ay, fluxes.by, dt / rho.h, out)
    neg = out.min()
    if neg < 0:
        if neg < -1e-300:
            raise PositivityError(f"negative density {neg:.3g} after step")
        np.maximum(out, 0.0, out=out)
    return rho.like(out)


def fp_step(rho: DensityGrid2D, vx, vy, dt: float, scheme: str = "sg", check_cfl=True):
    """One explicit step of d rho/dt = Lap rho - div(v rho) with given face velocities."""
    fluxes = FaceFluxes.build(vx, vy, rho.h, scheme)
    if check_cfl and dt > fluxes.dt_max * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.3g} exceeds the positivity limit {fluxes.dt_max:.3g}")
    return apply_fluxes(rho, fluxes, dt)


def ks_step(rho: DensityGrid2D, chi: float, conf: ConfinementSpec, dt: float, scheme: str = "sg"):
    vx, vy = face_velocities(rho, chi, conf)
    return fp_step(rho, vx, vy, dt, scheme)


# -- functionals -----------------------------------------------------------


def boltzmann_entropy(values: np.ndarray, cell: float) -> float:
    """sum rho ln rho * cell with 0 ln 0 = 0."""
    pos = values > 0
    v = values[pos]
    return float(np.sum(v * np.log(v)) * cell)


def free_energy(rho: DensityGrid2D, chi: float, conf: ConfinementSpec, confinement_coef=1.0, c=None):
    """F = int rho ln rho + (chi/2) int c rho + coef * int U~ rho."""
    h2 = rho.h**2
    F = boltzmann_entropy(rho.values, h2)
    if chi != 0:
        if c is None:
            c = concentration(rho)
        F += 0.5 * chi * float(np.sum(c * rho.values) * h2)
    if conf.kind != "none":
        U = conf.potential_value(rho.points())
        F += confinement_coef * float(np.sum(U * rho.values) * h2)
    return F


def dissipation(rho: DensityGrid2D, chi: float, conf: ConfinementSpec, c=None) -> float:
    """D = int |grad ln rho + chi grad c + grad U~|^2 rho, centred differences.

    Expanded as |grad rho|^2 / rho + 2 grad rho . w + |w|^2 rho so that cells with
    rho = 0 contribute nothing.
    """
    h = rho.h
    v = rho.values
    gx, gy = np.gradient(v, h)
    wx = np.zeros_like(v)
    wy = np.zeros_like(v)
    if chi != 0:
        if c is None:
            c = concentration(rho)
        cx, cy = np.gradient(c, h)
        wx += chi * cx
        wy += chi * cy
    if conf.kind != "none":
        b = confinement_drift(conf, rho.points())
        wx -= b[..., 0]
        wy -= b[..., 1]
    pos = v > 0
    fisher = np.zeros_like(v)
    fisher[pos] = (gx[pos] ** 2 + gy[pos] ** 2) / v[pos]
    total = fisher + 2 * (gx * wx + gy * wy) + (wx * wx + wy * wy) * v
    return float(max(np.sum(total) * h * h, 0.0))


@dataclass
class FunctionalTrace:
    t: float
    mass: float
    m2: float
    entropy: float
    F: float
    D: float
    linf: float
    boundary_mass: float = 0.0

    def row(self):
        return (self.t, self.mass, self.m2, self.entropy, self.F, self.D, self.linf)


def trace_point(t, rho, chi, conf, confinement_coef=1.0, c=None) -> FunctionalTrace:
    if c is None and chi != 0:
        c = concentration(rho)
    return FunctionalTrace(
        t=t,
        mass=rho.mass,
        m2=rho.second_moment(),
        entropy=boltzmann_entropy(rho.values, rho.h**2),
        F=free_energy(rho, chi, conf, confinement_coef, c),
        D=dissipation(rho, chi, conf, c),
        linf=float(rho.values.max()),
        boundary_mass=rho.boundary_mass(),
    )


# -- blow-up ---------------------------------------------------------------


def fit_slope(t, y) -> float:
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if len(t) < 2:
        return math.nan
    return float(np.polyfit(t, y, 1)[0])


@dataclass
class BlowupReport:
    applicable: bool
    slope: float
    expected_slope: float
    zero_crossing_estimate: float
    blowup_time_bound: float
    blown_up: bool
    alarm_time: float
    reason: str
    resolved_until: float


def blowup_monitor(
    trace: list,
    chi: float,
    m20: float,
    linf_guard: float = math.inf,
    slope_tol: float = 0.1,
    window: int = 3,
) -> BlowupReport:
    """Slope fit, m2 zero-crossing extrapolation and resolution-loss alarm.

    The run counts as blown up at the first record where linf exceeds ``linf_guard``
    or the local m2 slope (over ``window`` record intervals) leaves 4 - chi by more
    than ``slope_tol`` relative. The reported slope is fitted on records before that.
    """
    expected = 4.0 - chi
    applicable = chi > 4
    t = np.array([p.t for p in trace])
    m2 = np.array([p.m2 for p in trace])
    linf = np.array([p.linf for p in trace])
    alarm = len(t)
    reason = ""
    for k in range(len(t)):
        if linf[k] > linf_guard:
            alarm, reason = k, "linf"
            break
        if k >= window:
            local = (m2[k] - m2[k - window]) / (t[k] - t[k - window])
            if abs(local - expected) > slope_tol * abs(expected):
                alarm, reason = k, "slope"
                break
    good = max(alarm - (window if reason == "slope" else 0), 2)
    good = min(good, len(t))
    slope = fit_slope(t[:good], m2[:good])
    return BlowupReport(
        applicable=applicable,
        slope=slope,
        expected_slope=expected,
        zero_crossing_estimate=m20 / (chi - 4) if applicable else math.nan,
        blowup_time_bound=m20 / (2 * math.pi * chi * (chi - 4)) if applicable else math.nan,
        blown_up=alarm < len(t),
        alarm_time=float(t[alarm]) if alarm < len(t) else math.nan,
        reason=reason,
        resolved_until=float(t[good - 1]) if good >= 1 else 0.0,
    )


# -- driver ----------------------------------------------------------------


@dataclass
class KSRun:
    trace: list
    final: DensityGrid2D
    steps: int
    alarm: BlowupReport | None = None
    escaped: bool = False
    snapshots: list = field(default_factory=list)


def run_ks(
    rho0: DensityGrid2D,
    chi: float,
    conf: ConfinementSpec = ConfinementSpec(),
    T: float = 1.0,
    record_dt: float = 0.01,
    scheme: str = "sg",
    safety: float = 0.9,
    confinement_coef: float = 1.0,
    linf_guard: float = math.inf,
    stop_on_blowup: bool = False,
    slope_tol: float = 0.1,
    keep_snapshots: bool = False,
    potential_every: int = 1,
) -> KSRun:
    """Integrate to T with the largest stable step (times ``safety``), recording every record_dt.

    The concentration and face velocities are recomputed every ``potential_every``
    steps and held fixed in between (positivity only needs the CFL limit of the
    velocities actually used). With stop_on_blowup the run ends at the first
    blow-up alarm (see blowup_monitor).
    """
    rho = rho0
    t = 0.0
    n_rec = int(round(T / record_dt))
    trace = [trace_point(0.0, rho, chi, conf, confinement_coef)]
    snaps = [rho] if keep_snapshots else []
    m20 = trace[0].m2
    steps = 0
    escaped = False
    alarm = None
    for r in range(1, n_rec + 1):
        t_next = r * record_dt
        while t < t_next - 1e-14:
            if steps % potential_every == 0:
                c = concentration(rho) if chi != 0 else None
                vx, vy = face_velocities(rho, chi, conf, c)
                fluxes = FaceFluxes.build(vx, vy, rho.h, scheme)
            dt = min(safety * fluxes.dt_max, t_next - t)
            rho = apply_fluxes(rho, fluxes, dt)
            t = t_next if abs(t + dt - t_next) < 1e-14 else t + dt
            steps += 1
        point = trace_point(t, rho, chi, conf, confinement_coef)
        trace.append(point)
        if keep_snapshots:
            snaps.append(rho)
        if point.boundary_mass > 1e-6 and not escaped:
            escaped = True
            warnings.warn(f"boundary cells carry {point.boundary_mass:.2e} of the mass at t={t:.4g}")
        if stop_on_blowup:
            rep = blowup_monitor(trace, chi, m20, linf_guard, slope_tol)
            if rep.blown_up:
                alarm = rep
                break
    if alarm is None and stop_on_blowup:
        alarm = blowup_monitor(trace, chi, m20, linf_guard, slope_tol)
    return KSRun(trace, rho, steps, alarm, escaped, snaps)
