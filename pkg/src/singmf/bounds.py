"""Closed-form entropy, Fisher-information and hierarchy bounds, and checkers
comparing them with grid densities."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from . import estimators
from .kernels import KernelSpec


class BoundError(ValueError):
    """Parameters outside the range where a bound is stated."""


class QuadratureError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (residual {residual:.3g})")
        self.residual = residual


@dataclass(frozen=True)
class CheckResult:
    lhs: float
    rhs: float
    satisfied: bool
    resolved: bool = True


# -- Gagliardo-Nirenberg and log-Sobolev ------------------------------------


def _check_p(d: int, p: float):
    if d < 2:
        raise BoundError("GN inequality needs d >= 2")
    if p < 1:
        raise BoundError("GN inequality needs p >= 1")
    if d > 2 and p > d / (d - 2):
        raise BoundError(f"p must not exceed d/(d-2) = {d / (d - 2):.6g}")


def gn_constant(d: int, p: float) -> float:
    """a with ||rho||_p <= a^{d(p-1)/p} I(rho)^{d(p-1)/(2p)}."""
    _check_p(d, p)
    return 2 * p * (d - 1) / (p * (d - 2) + d) / math.sqrt(d)


def gn_gradient_constant(d: int, q: float) -> float:
    """Constant ((d-1)/(d-q)) q / sqrt(d) of the gradient form, 1 <= q < d."""
    if d < 2 or not 1 <= q < d:
        raise BoundError("gradient GN constant needs 1 <= q < d")
    return (d - 1) / (d - q) * q / math.sqrt(d)


def _grid_dim(grid) -> int:
    return grid.d


def resolved(grid, cells: float = 8.0) -> bool:
    """Resolution guard: the Fisher length sqrt(d / I) spans at least ``cells`` cells."""
    I = estimators.fisher(grid)
    return I > 0 and math.sqrt(_grid_dim(grid) / I) >= cells * grid.h


def gn_check(grid, p: float) -> CheckResult:
    d = _grid_dim(grid)
    a = gn_constant(d, p)
    v = grid.values
    lhs = float((np.sum(v**p) * grid.cell_volume) ** (1 / p))
    I = estimators.fisher(grid)
    rhs = a ** (d * (p - 1) / p) * I ** (d * (p - 1) / (2 * p))
    return CheckResult(lhs, rhs, lhs <= rhs * (1 + 1e-2), resolved(grid))


def logsobolev_check(grid) -> CheckResult:
    """int rho ln rho <= (d/2) ln(4 I / (d pi e))."""
    d = _grid_dim(grid)
    I = estimators.fisher(grid)
    if not I > 0:
        raise BoundError("Fisher information vanished; not a resolved density")
    lhs = estimators.entropy(grid).value
    rhs = 0.5 * d * math.log(4 * I / (d * math.pi * math.e))
    return CheckResult(lhs, rhs, lhs <= rhs + 1e-2, resolved(grid))


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def neg_moment_constant(gamma: float, beta: float, d: int) -> float:
    """C(gamma, beta, d) with E|Y1 - Y2|^-gamma <= C (1 + I^{d beta / 2}).

    Assembly, with Z = Y1 - Y2 of density rho~ and p = 1 / (1 - beta):
      E|Z|^-gamma <= 1 + int_{|z|<=1} |z|^-gamma rho~            (split at |z| = 1)
                  <= 1 + V^beta ||rho~||_p                        (Hoelder)
                  <= 1 + V^beta a^{d beta} I(rho~)^{d beta / 2}   (GN at p, d(p-1)/p = beta)
    with V = int_{|z|<=1} |z|^{-gamma/beta} dz = |S^{d-1}| / (d - gamma/beta) and
    a = gn_constant(d, p). The map (y1, y2) -> (y1 - y2, y1 + y2) is sqrt(2) times an
    isometry, so the joint Fisher information of its image is I(joint) / 2, and the
    marginal rho~ has no more Fisher information than that. Hence
      E|Z|^-gamma <= 1 + V^beta a^{d beta} 2^{-d beta / 2} I^{d beta / 2}
    and C = max(1, V^beta a^{d beta} 2^{-d beta / 2}).
    """
    if not 0 < gamma < 2:
        raise BoundError("gamma must lie in (0, 2)")
    if d < 2:
        raise BoundError("d must be >= 2")
    top = 2.0 / d
    if not gamma / d < beta <= top or (beta == top and d < 3):
        raise BoundError("beta must lie in (gamma/d, 2/d), with 2/d allowed only for d >= 3")
    sphere = d * unit_ball_volume(d)
    V = sphere / (d - gamma / beta)
    a = gn_constant(d, 1.0 / (1.0 - beta))
    return max(1.0, V**beta * a ** (d * beta) * 2 ** (-d * beta / 2))


def neg_moment_bound(gamma: float, beta: float, d: int, I: float) -> float:
    if I < 0:
        raise BoundError("Fisher information must be >= 0")
    return neg_moment_constant(gamma, beta, d) * (1 + I ** (d * beta / 2))


def entropy_lower(moment: float, lnZV: float, d: int) -> float:
    """-d ln Z_V - int V~ rho."""
    return -d * lnZV - moment


def fisher_time_integral_rhs(lam, drift_energy, A, d, T, init_term) -> float:
    """4(1+lam) E int |beta|^2 + (1 + 1/lam) d A^2 T + (1+lam) int (ln rho0 + V~) rho0."""
    if not lam > 0:
        raise BoundError("lambda must be > 0")
    return 4 * (1 + lam) * drift_energy + (1 + 1 / lam) * d * A * A * T + (1 + lam) * init_term


# -- entropy hierarchy --------------------------------------------------------


@dataclass(frozen=True)
class HierarchyParams:
    gammaK: float
    T: float
    C0: float
    epsN: float
    IT: float
    k: int
    N: int

    def __post_init__(self):
        if not self.gammaK > 0:
            raise BoundError("gammaK must be > 0")
        if self.T < 0 or self.C0 < 0 or self.epsN < 0 or self.IT < 0:
            raise BoundError("T, C0, epsN, IT must be >= 0")
        if not 1 <= self.k <= self.N:
            raise BoundError("need 1 <= k <= N")

    @classmethod
    def bounded_kernel(cls, kernel: KernelSpec, T, k, N, C0=0.0, epsN=0.0):
        """gamma(K) = 2 ||K||^2 and I_T = 4 ||K||^2 T for a bounded kernel."""
        sup = kernel.sup_norm()
        if not math.isfinite(sup):
            raise BoundError("kernel is unbounded")
        return cls(2 * sup**2, T, C0, epsN, 4 * sup**2 * T, k, N)


@dataclass(frozen=True)
class LackerCoefficients:
    A: float
    B: float
    residual: float


def _chain(j, l, T, gammaK, base_b, rtol, atol):
    """Solve y_i' = lam_i (y_{i+1} - y_i), i = j..l, lam_i = i gamma / 2.

    For A: y_{l+1} = 1, y_i(0) = 0. For B: y_l' = -lam_l y_l with y_l(0) = 1, y_i(0) = 0.
    """
    idx = np.arange(j, l + 1, dtype=float)
    lam = idx * gammaK / 2
    n = len(idx)

    def rhs(t, y):
        nxt = np.empty(n)
        nxt[:-1] = y[1:]
        nxt[-1] = 0.0 if base_b else 1.0
        return lam * (nxt - y)

    y0 = np.zeros(n)
    if base_b:
        y0[-1] = 1.0
    jac = np.diag(-lam) + np.diag(lam[:-1], 1)
    sol = integrate.solve_ivp(rhs, (0.0, T), y0, method="Radau", rtol=rtol, atol=atol, jac=jac)
    if not sol.success:
        raise QuadratureError(f"ODE solver failed: {sol.message}", math.inf)
    return float(sol.y[0, -1])


def lacker_coefficients(j: int, l: int, T: float, gammaK: float, tol: float = 1e-8, closed_form: bool = True):
    """A_j^l(T) and B_j^l(T) from the nested recursion

        A_j^l(T) = (j gamma/2) int_0^T exp(-(j gamma/2)(T - t)) A_{j+1}^l(t) dt,  A_{l+1}^l = 1,
        B_j^l(T) = same recursion,                                               B_l^l(t) = exp(-l gamma t / 2).

    The recursion is exactly the linear ODE chain y_j' = (j gamma/2)(y_{j+1} - y_j),
    which is integrated with an implicit Runge-Kutta method at two tolerances; their
    difference is the reported residual and must stay below ``tol``.
    B is nan when j = l + 1. The one-level case j = l uses its closed form unless
    closed_form is False.
    """
    if j < 1 or j > l + 1:
        raise BoundError("need 1 <= j <= l + 1")
    if T < 0 or not gammaK > 0:
        raise BoundError("need T >= 0 and gammaK > 0")
    if j == l + 1:
        return LackerCoefficients(1.0, math.nan, 0.0)
    if j == l and closed_form:
        a = -math.expm1(-j * gammaK * T / 2)
        return LackerCoefficients(a, math.exp(-l * gammaK * T / 2), 0.0)
    if T == 0:
        return LackerCoefficients(0.0, 0.0, 0.0)
    vals = []
    for rtol, atol in ((1e-10, 1e-12), (1e-12, 1e-14)):
        vals.append((_chain(j, l, T, gammaK, False, rtol, atol), _chain(j, l, T, gammaK, True, rtol, atol)))
    residual = max(abs(vals[0][0] - vals[1][0]), abs(vals[0][1] - vals[1][1]))
    if residual > tol:
        raise QuadratureError("hierarchy coefficients did not converge", residual)
    return LackerCoefficients(vals[1][0], vals[1][1], residual)


def _tail(p: HierarchyParams, gamma_T: float) -> float:
    gap = max(math.exp(-gamma_T / 2) - p.k / p.N, 0.0)
    return math.exp(-2 * p.N * gap * gap)


def lacker_terms(p: HierarchyParams) -> tuple:
    """The four summands of the forward hierarchy bound."""
    gT = p.gammaK * p.T
    N2 = p.N**2
    return (
        p.C0 * p.epsN * 2 * p.k**2 * math.exp(gT),
        p.IT * (p.k + 3) ** 3 / (6 * N2) * math.exp(1.5 * gT),
        p.k**3 * p.IT / (2 * N2),
        (p.C0 * N2 * p.epsN + 0.25 * p.N * p.IT) * _tail(p, gT),
    )


def lacker_reverse_terms(p: HierarchyParams) -> tuple:
    gT = p.gammaK * p.T
    N2 = p.N**2
    return (
        p.C0 * p.epsN * 2 * p.k**2 * math.exp(gT),
        p.IT * (p.k + 2) ** 2 / (4 * N2) * math.exp(gT),
        p.k**2 * p.IT / (2 * N2),
        (p.C0 * N2 * p.epsN + p.IT) * _tail(p, gT),
    )


def lacker_bound(p: HierarchyParams) -> float:
    return float(sum(lacker_terms(p)))


def lacker_reverse_bound(p: HierarchyParams) -> float:
    return float(sum(lacker_reverse_terms(p)))


# -- Orlicz norm ---------------------------------------------------------------


def orlicz_theta_norm(grid, tol: float = 1e-8) -> float:
    """Luxemburg norm for Theta(u) = e^u - 1: the c solving sum (e^{rho/c} - 1) h^2 = 1."""
    v = grid.values
    vol = grid.cell_volume
    vmax = float(v.max())
    if vmax <= 0:
        raise BoundError("density vanishes identically")

    def f(c):
        with np.errstate(over="ignore"):
            return float(np.sum(np.expm1(v / c)) * vol) - 1.0

    lo = vmax / 700.0
    hi = max(vmax, 2.0 * (math.e - 1) * float(v.sum() * vol), 1.0)
    while f(hi) > 0:
        hi *= 2
        if hi > 1e300:
            raise BoundError("bisection bracket failure")
    if not f(lo) > 0:
        raise BoundError("bisection bracket failure")
    return float(optimize.bisect(f, lo, hi, xtol=tol * 1e-2, rtol=1e-14, maxiter=400))


@dataclass(frozen=True)
class TrudingerResult:
    ratios: tuple
    bound: float


def trudinger_check(grids) -> TrudingerResult:
    """N_Theta(rho) / (1 + I(rho)) over a family; ``bound`` is the common constant."""
    ratios = tuple(orlicz_theta_norm(g) / (1 + estimators.fisher(g)) for g in grids)
    return TrudingerResult(ratios, max(ratios))
