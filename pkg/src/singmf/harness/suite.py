"""Quick pass/fail checks of the invariants each module promises."""
from __future__ import annotations

import math

import numpy as np

from .. import bounds, estimators
from ..grid import DensityGrid2D
from ..kernels import ConfinementSpec, KernelSpec, eval_kernel
from ..meanfield import McKeanConfig, chaos_experiment, convolve_field, mean_field_drift, picard_grid
from ..particles import GaussianInit, SimConfig, coupled_simulate, interaction_batch, simulate_batch
from ..pde2d import concentration, ks_step, run_ks
from .config import parse_config

FREE = ConfinementSpec()
KERNELS = [
    KernelSpec.keller_segel(1.0),
    KernelSpec.biot_savart(1.5),
    KernelSpec.riesz(-1.0, 1.0, 3),
    KernelSpec.relaxed_ks(2.0, 0.5),
    KernelSpec.dyson(-3.0),
    KernelSpec.keller_segel(1.0).regularized("eps", 0.1),
    KernelSpec.keller_segel(1.0).regularized("cap", 2.0),
    KernelSpec.keller_segel(1.0).regularized("hard_truncate", 2.0),
]


def _points(d, n=200, seed=0):
    return np.random.default_rng(seed).normal(size=(n, d)) * 2


def check_kernel_zero():
    worst = max(float(np.abs(eval_kernel(k, np.zeros(k.d))).max()) for k in KERNELS)
    return worst == 0.0, worst, 0.0


def check_antisymmetry():
    worst = 0.0
    for k in KERNELS:
        x = _points(k.d)
        worst = max(worst, float(np.abs(eval_kernel(k, -x) + eval_kernel(k, x)).max()))
    return worst == 0.0, worst, 0.0


def check_vortex_orthogonality():
    x = _points(2)
    v = eval_kernel(KernelSpec.biot_savart(1.0), x)
    worst = float(np.max(np.abs(np.sum(x * v, axis=1)) / (np.linalg.norm(x, axis=1) * np.linalg.norm(v, axis=1))))
    return worst < 1e-15, worst, 1e-15


def check_eps_limit():
    x = _points(2)
    base = eval_kernel(KernelSpec.keller_segel(1.0), x)
    errs = [float(np.abs(eval_kernel(KernelSpec.keller_segel(1.0).regularized("eps", e), x) - base).max())
            for e in (1e-2, 1e-4, 1e-6)]
    return errs[0] > errs[1] > errs[2] and errs[2] < 1e-3, errs[2], 1e-3


def check_cap_dominance():
    x = _points(2) * 0.05
    raw = np.linalg.norm(eval_kernel(KernelSpec.keller_segel(1.0), x), axis=1)
    cap = np.linalg.norm(eval_kernel(KernelSpec.keller_segel(1.0).regularized("cap", 2.0), x), axis=1)
    excess = float(np.max(cap - np.minimum(raw, 2.0)))
    return excess <= 1e-12, excess, 1e-12


def check_determinism():
    cfg = SimConfig(N=16, d=2, dt=1e-2, T=0.2, seed=3)
    a = simulate_batch(cfg, KernelSpec.keller_segel(1.0), FREE, GaussianInit(), [3, 4])
    b = simulate_batch(cfg, KernelSpec.keller_segel(1.0), FREE, GaussianInit(), [4])
    same = np.array_equal(a.final[1], b.final[0]) and np.array_equal(a.second_moment[1], b.second_moment[0])
    return bool(same), 0.0 if same else 1.0, 0.0


def _virial(kernel, d, N=24):
    cfg = SimConfig(N=N, d=d, dt=1e-3, T=0.05, seed=5)
    traj = simulate_batch(cfg, kernel, FREE, GaussianInit(), [5, 6], track_virial=True)
    return traj


def check_vortex_virial():
    traj = _virial(KernelSpec.biot_savart(1.0), 2)
    worst = float(np.max(np.abs(traj.virial) / traj.virial_scale))
    return worst < 1e-12, worst, 1e-12


def check_ks_virial():
    N, chi = 24, 1.5
    traj = _virial(KernelSpec.keller_segel(chi), 2, N)
    worst = float(np.max(np.abs(traj.virial / (chi * (N - 1) / 2) - 1)))
    return worst < 1e-10, worst, 1e-10


def check_dyson_virial():
    N, chi = 24, -2.0
    traj = _virial(KernelSpec.dyson(chi), 1, N)
    worst = float(np.max(np.abs(traj.virial / (chi * (N - 1) / 2) - 1)))
    return worst < 1e-10, worst, 1e-10


def check_exchangeability():
    X = _points(2, 30)
    perm = np.random.default_rng(1).permutation(30)
    k = KernelSpec.keller_segel(1.0)
    a = interaction_batch(X, k)[perm]
    b = interaction_batch(X[perm], k)
    err = float(np.abs(a - b).max())
    return err < 1e-14, err, 1e-14


def check_coupling_identity():
    cfg = SimConfig(N=16, d=2, dt=1e-2, T=0.2, seed=1)
    k = KernelSpec.biot_savart(1.0)
    # a cap far above any realized interaction leaves the dynamics untouched
    res = coupled_simulate(cfg, k, k.regularized("cap", 1e12), FREE, GaussianInit())
    worst = float(res.sup_distance.max())
    return worst == 0.0, worst, 0.0


def check_chaos_zero():
    cfg = McKeanConfig(N=1, d=2, dt=0.05, T=0.2, seed=2, M=1000, method="mesh")
    tab = chaos_experiment([4, 8], cfg, KernelSpec.keller_segel(0.0).regularized("cap", 1.0), FREE, GaussianInit(),
                           n_seeds=3)
    worst = max(tab.error)
    return worst == 0.0, worst, 0.0


def check_mollifier_cauchy():
    x = np.random.default_rng(4).normal(size=(4000, 2))
    probes = np.array([[0.5, 0.3], [1.2, -0.7]])
    k = KernelSpec.keller_segel(1.0)
    drifts = [mean_field_drift(x, k, d, probes) for d in (0.4, 0.2, 0.1)]
    a = float(np.abs(drifts[0] - drifts[1]).max())
    b = float(np.abs(drifts[1] - drifts[2]).max())
    return b < a, b, a


def check_picard_mass():
    g = DensityGrid2D.gaussian(1.0, 0.25, half_width=5)
    res = picard_grid(g, KernelSpec.keller_segel(1.0), FREE, 0.1, 0.01, tol=1e-6, max_iter=20, record_every=1)
    drift = max(abs(x.mass - 1) for x in res.flow.grids)
    pos = all(x.values.min() >= 0 for x in res.flow.grids)
    return drift < 1e-8 and pos and res.converged, drift, 1e-8


def check_pde_mass():
    g = DensityGrid2D.gaussian(1.0, 0.125, half_width=5)
    nxt = ks_step(g, 2.0, FREE, 1e-3)
    err = abs(nxt.mass - g.mass)
    return err < 1e-14 and nxt.values.min() >= 0, err, 1e-14


def check_free_energy_monotone():
    g = DensityGrid2D.gaussian(math.sqrt(0.3), 1 / 16, half_width=5)
    run = run_ks(g, 2.0, FREE, 0.1, 0.02)
    F = np.array([p.F for p in run.trace])
    t = np.array([p.t for p in run.trace])
    rate = float(np.max(np.diff(F) / np.diff(t)))
    return rate <= 1e-3, rate, 1e-3


def check_drift_consistency():
    errs = []
    for h in (1 / 8, 1 / 16):
        g = DensityGrid2D.gaussian(1.0, h, half_width=5)
        c = concentration(g)
        F = convolve_field(g, KernelSpec.keller_segel(1.0))
        errs.append(float(np.abs(np.diff(c, axis=0) / h - 0.5 * (F[1:, :, 0] + F[:-1, :, 0])).max()))
    return errs[0] / errs[1] > 3.0, errs[1], errs[0] / 3


def check_pinsker():
    g = DensityGrid2D.gaussian(1.0, 1 / 16, half_width=6)
    X, Y = g.mesh()
    other = g.like(np.exp(-((X - 0.7) ** 2 + Y**2) / 2.0)).normalized()
    res = estimators.pinsker_gap(g, other)
    return res.satisfied, res.tv, res.entropy_bound


def check_logsobolev():
    worst = -math.inf
    for s in (0.5, 1.0, 2.0):
        r = bounds.logsobolev_check(DensityGrid2D.gaussian(s, s / 16))
        worst = max(worst, r.lhs - r.rhs)
    return worst <= 1e-2, worst, 1e-2


def check_permutation_invariance():
    x = np.random.default_rng(7).normal(size=(500, 2))
    y = np.random.default_rng(8).normal(size=(500, 2)) + 0.3
    p = np.random.default_rng(9).permutation(500)
    a = estimators.w1(x, y)
    b = estimators.w1(x[p], y[p])
    return a == b, abs(a - b), 0.0


def check_lacker_one_level():
    c = bounds.lacker_coefficients(2, 2, 1.0, 1.0, closed_form=False)
    err = max(abs(c.A - (1 - math.exp(-1))), abs(c.B - math.exp(-1)))
    return err < 1e-8, err, 1e-8


def check_gn():
    ok = all(bounds.gn_check(DensityGrid2D.gaussian(s, s / 16), 2.0).satisfied for s in (0.5, 1.0, 2.0))
    return ok, 0.0, 0.0


def check_config_round_trip():
    text = "[experiment]\nname = simulate\n[kernel]\nfamily = biot_savart\nchi = 1\n[sim]\nN = 8\nd = 2\ndt = 0.01\nT = 1\n[seeds]\ncount = 3\n"
    a = parse_config(text).to_text()
    b = parse_config(a).to_text()
    return a == b, 0.0, 0.0


CHECKS = [
    ("kernels.zero_at_origin", check_kernel_zero),
    ("kernels.antisymmetry", check_antisymmetry),
    ("kernels.vortex_orthogonality", check_vortex_orthogonality),
    ("kernels.eps_limit", check_eps_limit),
    ("kernels.cap_dominance", check_cap_dominance),
    ("particles.determinism", check_determinism),
    ("particles.vortex_virial", check_vortex_virial),
    ("particles.ks_virial", check_ks_virial),
    ("particles.dyson_virial", check_dyson_virial),
    ("particles.exchangeability", check_exchangeability),
    ("particles.coupling_identity", check_coupling_identity),
    ("meanfield.chaos_zero", check_chaos_zero),
    ("meanfield.mollifier_cauchy", check_mollifier_cauchy),
    ("meanfield.picard_mass_positivity", check_picard_mass),
    ("pde2d.mass_positivity", check_pde_mass),
    ("pde2d.free_energy_monotone", check_free_energy_monotone),
    ("pde2d.drift_matches_convolution", check_drift_consistency),
    ("estimators.pinsker", check_pinsker),
    ("estimators.logsobolev", check_logsobolev),
    ("estimators.permutation_invariance", check_permutation_invariance),
    ("bounds.lacker_one_level", check_lacker_one_level),
    ("bounds.gn_gaussians", check_gn),
    ("harness.config_round_trip", check_config_round_trip),
]


def run_identity_suite(quick: bool = True) -> list:
    """Rows (check, passed, value, tolerance); a raising check counts as failed."""
    rows = []
    for name, fn in CHECKS:
        try:
            ok, value, tol = fn()
        except Exception as e:  # report, do not abort the table
            ok, value, tol = False, f"{type(e).__name__}: {e}", ""
        rows.append((name, bool(ok), value, tol))
    return rows
