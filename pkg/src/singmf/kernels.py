"""Interaction kernels, regularizations, confinement drifts and cut-off schedules.

Every kernel is an odd vector field with K(0) = 0. The numpy evaluators here are
the reference implementation; the compiled pair loops in ``_pairs`` mirror them
and are tested against them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


class ConfigError(ValueError):
    """Invalid kernel, confinement or simulation parameters."""


FAMILIES = ("riesz", "biot_savart", "keller_segel", "relaxed_ks", "dyson")
REGULARIZATIONS = ("none", "eps", "cap", "hard_truncate")
CONFINEMENTS = ("none", "quadratic", "separable")
POTENTIALS = ("smooth_abs", "abs", "half_square")

# integer codes shared with the compiled loops
FAMILY_CODE = {"riesz": 0, "biot_savart": 1, "relaxed_ks": 2, "dyson": 3}
REG_CODE = {"none": 0, "eps": 1, "cap": 2, "hard_truncate": 3}


@dataclass(frozen=True)
class Regularization:
    kind: str = "none"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in REGULARIZATIONS:
            raise ConfigError(f"regularization: unknown kind {self.kind!r}")
        if self.kind != "none" and not self.value > 0:
            raise ConfigError(f"regularization: {self.kind} needs a positive parameter")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family with parameters.

    ``keller_segel`` is stored as ``riesz`` with s=0, d=2, so ``family`` is one of
    riesz, biot_savart, relaxed_ks, dyson after construction.
    """

    family: str
    chi: float
    s: float = 0.0
    d: int = 2
    eta: float = 1.0
    regularization: Regularization = field(default_factory=Regularization)

    def __post_init__(self):
        if self.family == "keller_segel":
            object.__setattr__(self, "family", "riesz")
            object.__setattr__(self, "s", 0.0)
            object.__setattr__(self, "d", 2)
        if self.family not in FAMILY_CODE:
            raise ConfigError(f"kernel.family: unknown family {self.family!r}")
        if self.family == "biot_savart" or self.family == "relaxed_ks":
            object.__setattr__(self, "d", 2)
        if self.family == "dyson":
            object.__setattr__(self, "d", 1)
        if self.family == "riesz" and (self.s < 0 or self.d < 1):
            raise ConfigError("kernel: riesz needs s >= 0 and d >= 1")
        if self.family == "relaxed_ks" and not 0 < self.eta < 2:
            raise ConfigError("kernel: relaxed_ks needs eta in (0, 2)")
        if not math.isfinite(self.chi):
            raise ConfigError("kernel.chi must be finite")

    @classmethod
    def riesz(cls, chi, s, d, **kw):
        return cls("riesz", chi, s=s, d=d, **kw)

    @classmethod
    def keller_segel(cls, chi, **kw):
        return cls("riesz", chi, s=0.0, d=2, **kw)

    @classmethod
    def biot_savart(cls, chi, **kw):
        return cls("biot_savart", chi, **kw)

    @classmethod
    def relaxed_ks(cls, chi, eta, **kw):
        return cls("relaxed_ks", chi, eta=eta, **kw)

    @classmethod
    def dyson(cls, chi, **kw):
        return cls("dyson", chi, **kw)

    def regularized(self, kind: str, value: float) -> "KernelSpec":
        return replace(self, regularization=Regularization(kind, value))

    @property
    def is_keller_segel(self) -> bool:
        return self.family == "riesz" and self.s == 0 and self.d == 2

    @property
    def exponent(self) -> float:
        """Power p with |K(x)| = |chi| |x|^{1-p} for the radial families."""
        if self.family == "riesz":
            return self.s + 2.0
        if self.family == "relaxed_ks":
            return 2.0 - self.eta
        return 2.0

    @property
    def bounded(self) -> bool:
        r = self.regularization.kind
        if self.chi == 0 or r in ("cap", "hard_truncate"):
            return True
        if r == "eps":
            # |x| / (eps + |x|^2)^{p/2} is bounded iff p >= 1
            return self.exponent >= 1.0
        return False

    def sup_norm(self) -> float:
        """sup_x |K(x)|, infinite for singular kernels."""
        if self.chi == 0:
            return 0.0
        reg = self.regularization
        base = math.inf
        if reg.kind == "eps" and self.exponent >= 1.0:
            p, eps = self.exponent, reg.value
            if p == 1.0:
                base = abs(self.chi)
            else:
                # r / (eps + r^2)^{p/2} peaks at r^2 = eps / (p - 1)
                r2 = eps / (p - 1.0)
                base = abs(self.chi) * math.sqrt(r2) / (eps + r2) ** (p / 2)
        if reg.kind in ("cap", "hard_truncate"):
            return min(base, reg.value)
        return base


def eval_kernel(spec: KernelSpec, x) -> np.ndarray:
    """Evaluate K at x. Accepts a single d-vector or a stack of shape (..., d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != spec.d:
        raise ConfigError(
            f"kernel: argument dimension {x.shape[-1:] or 0} does not match d={spec.d}"
        )
    r2 = np.sum(x * x, axis=-1)
    reg = spec.regularization
    den2 = r2 + reg.value if reg.kind == "eps" else r2
    zero = r2 == 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if spec.family == "riesz":
            scale = spec.chi / den2 ** ((spec.s + 2.0) / 2.0)
        elif spec.family == "relaxed_ks":
            scale = spec.chi / den2 ** ((2.0 - spec.eta) / 2.0)
        else:
            scale = spec.chi / den2
        vec = np.stack([-x[..., 1], x[..., 0]], axis=-1) if spec.family == "biot_savart" else x
        out = scale[..., None] * vec
        if reg.kind in ("cap", "hard_truncate"):
            # |K| = |scale| |x| can overflow for tiny x; cap along the unit direction instead.
            # hypot avoids the subnormal r2 that loses digits below |x| ~ 1e-154
            r = np.hypot.reduce(x, axis=-1)
            norm = np.abs(scale) * r
            if reg.kind == "cap":
                unit = np.sign(scale)[..., None] * vec / r[..., None]
                out = np.where((norm > reg.value)[..., None], reg.value * unit, out)
            else:
                out = np.where((norm <= reg.value)[..., None], out, 0.0)
    return np.where(zero[..., None], 0.0, out)


def mollified_kernel(spec: KernelSpec, x, delta: float, order: int = 12) -> np.ndarray:
    """(K * phi_delta)(x) with phi_delta the centred Gaussian of covariance delta^2 I.

    Uses the closed form K(x)(1 - exp(-|x|^2 / 2 delta^2)) for the unregularized
    logarithmic kernels in 2D (Keller-Segel and Biot-Savart), and tensor
    Gauss-Hermite quadrature otherwise.
    """
    x = np.asarray(x, dtype=float)
    if delta <= 0:
        return eval_kernel(spec, x)
    if spec.regularization.kind == "none" and (
        spec.is_keller_segel or spec.family == "biot_savart"
    ):
        r2 = np.sum(x * x, axis=-1)
        return eval_kernel(spec, x) * (-np.expm1(-r2 / (2 * delta**2)))[..., None]
    nodes, weights = gauss_hermite_nodes(spec.d, order)
    out = np.zeros(np.broadcast_shapes(x.shape), dtype=float)
    for z, w in zip(nodes, weights):
        out += w * eval_kernel(spec, x - delta * z)
    return out


def gauss_hermite_nodes(d: int, order: int):
    """Tensor Gauss-Hermite rule for the standard normal in d dimensions."""
    t, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    grids = np.meshgrid(*([t] * d), indexing="ij")
    wgrids = np.meshgrid(*([w] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


def transport_constant(spec: KernelSpec) -> float:
    """gamma(K) = 2 ||K||_inf^2 for a bounded kernel."""
    sup = spec.sup_norm()
    if not math.isfinite(sup):
        raise ConfigError("kernel is unbounded; regularize it first")
    return 2.0 * sup**2


@dataclass(frozen=True)
class CutoffSchedule:
    A_N: float
    admissible: bool
    margin: float


def cutoff_schedule(N: int, T: float, theta: float) -> CutoffSchedule:
    """Cut-off level A_N = sqrt(theta ln N / T) and the divergence condition.

    admissible holds when ln N - A_N^2 T - ln(A_N^2 T) > 0.
    """
    if N < 2:
        raise ConfigError("cutoff: N must be >= 2")
    if not T > 0:
        raise ConfigError("cutoff: T must be > 0")
    if not 0 < theta < 1:
        raise ConfigError("cutoff: theta must lie in (0, 1)")
    lnN = math.log(N)
    a2t = theta * lnN
    margin = lnN - a2t - math.log(a2t)
    return CutoffSchedule(math.sqrt(a2t / T), margin > 0, margin)


@dataclass(frozen=True)
class ConfinementSpec:
    """Confinement potential U~.

    quadratic: U~(x) = beta |x|^2.
    separable: U~(x) = beta * sum_k V(x_k) with V one of
      smooth_abs  V(u) = sqrt(1 + u^2)   (|V'|, |V''| <= 1)
      abs         V(u) = |u|             (|V'| <= 1, V'' singular at 0)
      half_square V(u) = u^2 / 2         (unbounded V')
    """

    kind: str = "none"
    beta: float = 0.0
    potential: str = "smooth_abs"

    def __post_init__(self):
        if self.kind not in CONFINEMENTS:
            raise ConfigError(f"confinement.kind: unknown kind {self.kind!r}")
        if self.kind == "quadratic" and self.beta < 0:
            raise ConfigError("confinement.beta must be >= 0")
        if self.kind == "separable" and self.potential not in POTENTIALS:
            raise ConfigError(f"confinement.potential: unknown {self.potential!r}")

    @classmethod
    def quadratic(cls, beta):
        return cls("quadratic", beta)

    @classmethod
    def separable(cls, potential="smooth_abs", beta=1.0):
        return cls("separable", beta, potential)

    @property
    def bounded_derivative(self) -> bool:
        return self.kind == "none" or (
            self.kind == "separable" and self.potential in ("smooth_abs", "abs")
        )

    def potential_value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "none":
            return np.zeros(x.shape[:-1])
        if self.kind == "quadratic":
            return self.beta * np.sum(x * x, axis=-1)
        return self.beta * np.sum(_potential_1d(self.potential, x), axis=-1)

    def drift(self, x) -> np.ndarray:
        return confinement_drift(self, x)


def _potential_1d(name, u):
    if name == "smooth_abs":
        return np.sqrt(1.0 + u * u)
    if name == "abs":
        return np.abs(u)
    return 0.5 * u * u


def _potential_1d_prime(name, u):
    if name == "smooth_abs":
        return u / np.sqrt(1.0 + u * u)
    if name == "abs":
        return np.sign(u)
    return u


def confinement_drift(conf: ConfinementSpec, x) -> np.ndarray:
    """-grad U~(x), row-wise for stacked inputs."""
    x = np.asarray(x, dtype=float)
    if conf.kind == "none":
        return np.zeros_like(x)
    if conf.kind == "quadratic":
        return -2.0 * conf.beta * x
    return -conf.beta * _potential_1d_prime(conf.potential, x)


def log_partition_1d(potential: str) -> float:
    """ln of Z_V = int exp(-V(u)) du for the separable potentials (beta = 1)."""
    from scipy import integrate

    if potential == "abs":
        return math.log(2.0)
    if potential == "half_square":
        return 0.5 * math.log(2 * math.pi)
    val, _ = integrate.quad(lambda u: math.exp(-math.sqrt(1 + u * u)), -np.inf, np.inf)
    return math.log(val)
