"""Named experiments: required sections, typed parameters and runners."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import bounds, estimators
from ..grid import DensityGrid2D
from ..kernels import CONFINEMENTS, FAMILIES, REGULARIZATIONS, ConfigError, cutoff_schedule
from ..meanfield import McKeanConfig, chaos_experiment, derive_seed, mckean_simulate, picard_grid
from ..particles import CSV_HEADER, GaussianInit, LatticeInit, UniformInit, simulate_batch
from ..pde2d import SCHEMES, TRACE_HEADER, fit_slope, run_ks
from .config import ExperimentConfig, coerce

REQUIRED = object()


@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    default: object = REQUIRED
    doc: str = ""
    choices: tuple = ()


@dataclass(frozen=True)
class Experiment:
    name: str
    command: str
    summary: str
    runner: Callable
    sections: tuple = ()
    params: tuple = ()
    family: str | None = None

    @property
    def param_types(self) -> dict:
        return {p.name: p.kind for p in self.params}

    def describe(self) -> dict:
        return {
            "name": self.name,
            "command": self.command,
            "summary": self.summary,
            "sections": list(self.sections),
            "params": [
                {"name": p.name, "type": p.kind, "required": p.default is REQUIRED,
                 **({} if p.default is REQUIRED else {"default": p.default})}
                for p in self.params
            ],
        }


INIT_PARAMS = (
    Param("init", "str", "gaussian", "initial sampler", ("gaussian", "uniform", "lattice")),
    Param("init_scale", "float", 1.0, "std, half width or lattice spacing"),
)


def _sampler(params):
    scale = params["init_scale"]
    return {"gaussian": GaussianInit, "uniform": UniformInit, "lattice": LatticeInit}[params["init"]](scale)


# -- validation -----------------------------------------------------------------


def validate(cfg: ExperimentConfig, exp: Experiment) -> ExperimentConfig:
    """Type the params, fill defaults and build the kernel and confinement to check them."""
    params = {}
    known = {p.name: p for p in exp.params}
    for key in cfg.params:
        if key not in known:
            raise cfg.field_error(f"params.{key}", f"unknown field for experiment {exp.name!r}")
    for p in exp.params:
        name = f"params.{p.name}"
        if p.name in cfg.params:
            try:
                val = coerce(p.kind, cfg.params[p.name])
            except (ValueError, TypeError) as e:
                raise cfg.field_error(name, f"{e} (got {cfg.params[p.name]!r})") from None
        elif p.default is REQUIRED:
            raise cfg.field_error(name, "missing")
        else:
            val = p.default
        if p.choices and val not in p.choices:
            raise cfg.field_error(name, f"must be one of {', '.join(map(str, p.choices))}")
        params[p.name] = val
    cfg.params = params

    for sec in exp.sections:
        if sec == "seeds":
            if not cfg.seeds:
                raise cfg.field_error("seeds", "missing")
        elif not getattr(cfg, sec):
            raise cfg.field_error(sec, "missing section")
    if cfg.kernel is not None and "kernel" in exp.sections:
        fam = cfg.kernel.get("family")
        if fam not in FAMILIES:
            raise cfg.field_error("kernel.family", f"unknown family {fam!r} (expected one of {', '.join(FAMILIES)})")
        if cfg.kernel.get("regularization", "none") not in REGULARIZATIONS:
            raise cfg.field_error("kernel.regularization", f"unknown kind {cfg.kernel['regularization']!r}")
        if "chi" not in cfg.kernel:
            raise cfg.field_error("kernel.chi", "missing")
        try:
            spec = cfg.kernel_spec()
        except (ConfigError, TypeError) as e:
            raise cfg.field_error("kernel", str(e)) from None
        if exp.family == "keller_segel" and not spec.is_keller_segel:
            raise cfg.field_error("kernel.family", f"experiment {exp.name!r} needs keller_segel")
        if exp.family == "dyson" and spec.family != "dyson":
            raise cfg.field_error("kernel.family", f"experiment {exp.name!r} needs dyson")
    kind = cfg.confinement.get("kind", "none")
    if kind not in CONFINEMENTS:
        raise cfg.field_error("confinement.kind", f"unknown kind {kind!r}")
    try:
        cfg.confinement_spec()
    except (ConfigError, TypeError) as e:
        raise cfg.field_error("confinement", str(e)) from None
    if "sim" in exp.sections:
        for key in ("N", "d", "dt", "T"):
            if key not in cfg.sim:
                raise cfg.field_error(f"sim.{key}", "missing")
        try:
            cfg.sim_config()
        except ConfigError as e:
            raise cfg.field_error("sim", str(e)) from None
        if cfg.kernel is not None and cfg.kernel_spec().d != cfg.sim["d"]:
            raise cfg.field_error("sim.d", f"kernel lives in dimension {cfg.kernel_spec().d}")
    if "grid" in exp.sections:
        g = cfg.grid
        for key in ("nx", "ny", "h"):
            if key not in g:
                raise cfg.field_error(f"grid.{key}", "missing")
        if g["nx"] < 3 or g["ny"] < 3:
            raise cfg.field_error("grid.nx", "grid needs at least 3 cells per axis")
        if not g["h"] > 0:
            raise cfg.field_error("grid.h", "must be > 0")
    return cfg


def _grid(cfg: ExperimentConfig, sigma: float) -> DensityGrid2D:
    g = cfg.grid
    nx, ny, h = g["nx"], g["ny"], g["h"]
    origin = (-0.5 * (nx - 1) * h, -0.5 * (ny - 1) * h)
    grid = DensityGrid2D(nx, ny, h, origin, np.zeros((nx, ny)))
    X, Y = grid.mesh()
    return grid.like(np.exp(-(X * X + Y * Y) / (2 * sigma * sigma))).normalized()


# -- runners --------------------------------------------------------------------


def run_simulate(cfg, out):
    sim = cfg.sim_config(seed=cfg.seeds[0])
    traj = simulate_batch(sim, cfg.kernel_spec(), cfg.confinement_spec(), _sampler(cfg.params), cfg.seeds,
                          track_virial=cfg.params["track_virial"])
    for k, seed in enumerate(cfg.seeds):
        rows = [r.row() for r in traj.records(k)]
        out.csv(f"seed_{seed}/diagnostics.csv", CSV_HEADER, rows)
        out.csv(f"seed_{seed}/final.csv", [f"x{i}" for i in range(sim.d)], traj.final[k])
    res = {
        "second_moment_slope": fit_slope(traj.t, traj.second_moment.mean(axis=0)),
        "tamed_rows": int(traj.tamed_rows.sum()),
        "collisions": int(traj.collision.any(axis=1).sum()),
    }
    if traj.virial is not None:
        res["virial_mean"] = float(traj.virial.mean())
    return res


def run_dyson_gap(cfg, out):
    sim = cfg.sim_config(seed=cfg.seeds[0])
    traj = simulate_batch(sim, cfg.kernel_spec(), cfg.confinement_spec(), _sampler(cfg.params), cfg.seeds)
    per_seed = traj.min_gap.min(axis=1)
    out.csv("min_gap.csv", ("seed", "min_gap"), zip(cfg.seeds, per_seed))
    q = cfg.params["quantile"]
    return {
        "chi_over_N": cfg.kernel_spec().chi / sim.N,
        "quantile": q,
        "min_gap_quantile": float(np.quantile(per_seed, q)),
        "min_gap_median": float(np.median(per_seed)),
        "tamed_rows": int(traj.tamed_rows.sum()),
    }


def _ks_run(cfg, out, blowup: bool):
    p = cfg.params
    rho0 = _grid(cfg, p["sigma0"])
    chi = cfg.kernel_spec().chi
    run = run_ks(
        rho0, chi, cfg.confinement_spec(), p["T"], p["record_dt"], scheme=p["scheme"], safety=p["safety"],
        confinement_coef=p["confinement_coef"], potential_every=p["potential_every"],
        linf_guard=p["linf_guard"] / rho0.h**2 if blowup else math.inf, stop_on_blowup=blowup,
        slope_tol=p["slope_tol"] if blowup else 0.1,
    )
    out.csv("trace.csv", TRACE_HEADER, [pt.row() for pt in run.trace])
    out.grid("final_grid.csv", run.final)
    t = [pt.t for pt in run.trace]
    res = {
        "steps": run.steps,
        "m2_slope": fit_slope(t, [pt.m2 for pt in run.trace]),
        "mass_drift": max(abs(pt.mass - run.trace[0].mass) for pt in run.trace),
        "boundary_mass": max(pt.boundary_mass for pt in run.trace),
        "escaped": run.escaped,
    }
    if run.alarm is not None:
        res["blowup"] = dict(run.alarm.__dict__)
    return res


PDE_PARAMS = (
    Param("sigma0", "float", 1.0, "std of the Gaussian initial density"),
    Param("T", "float", REQUIRED),
    Param("record_dt", "float", 0.01),
    Param("scheme", "str", "sg", choices=SCHEMES),
    Param("safety", "float", 0.9, "fraction of the positivity time step"),
    Param("confinement_coef", "float", 1.0, "weight of U in the free energy"),
    Param("potential_every", "int", 1, "steps between concentration updates"),
)


def run_mckean(cfg, out):
    p = cfg.params
    mc = McKeanConfig(**{**cfg.sim, "seed": cfg.seeds[0]}, M=p["M"], mollifier_delta=p["mollifier_delta"],
                      method=p["method"], mesh_h=p["mesh_h"])
    run = mckean_simulate(mc, cfg.kernel_spec(), cfg.confinement_spec(), _sampler(p))
    rows = [r.row() for r in run.trajectory.records(0)]
    out.csv("diagnostics.csv", CSV_HEADER, rows)
    out.csv("final.csv", [f"x{i}" for i in range(mc.d)], run.marginals[-1])
    return {
        "method": run.method,
        "mollifier_delta": mc.mollifier_delta,
        "second_moment_slope_per_sample": fit_slope(run.trajectory.t, run.trajectory.second_moment[0]) / mc.M,
    }


def run_chaos(cfg, out):
    p = cfg.params
    ref_seed = p["reference_seed"] if p["reference_seed"] >= 0 else derive_seed(cfg.seeds[0], 1 << 32)
    mc = McKeanConfig(**{**cfg.sim, "seed": ref_seed}, M=p["M"], mollifier_delta=p["mollifier_delta"],
                      method="mesh", mesh_h=p["mesh_h"])
    tab = chaos_experiment(p["N_list"], mc, cfg.kernel_spec(), cfg.confinement_spec(), _sampler(p),
                           seeds=cfg.seeds)
    out.csv("chaos.csv", ("N", "error", "stderr"), tab.rows())
    return {"slope": tab.slope, "seeds": tab.seeds, "reference_seed": ref_seed}


def run_picard(cfg, out):
    p = cfg.params
    rho0 = _grid(cfg, p["sigma0"])
    res = picard_grid(rho0, cfg.kernel_spec(), cfg.confinement_spec(), p["T"], p["dt"], p["tol"], p["max_iter"],
                      p["omega"], p["record_every"])
    for k, (t, g) in enumerate(zip(res.flow.times, res.flow.grids)):
        out.grid(f"flow/grid_{k:05d}.csv", g)
    out.csv("flow/times.csv", ("index", "t"), enumerate(res.flow.times))
    out.csv("residuals.csv", ("iteration", "residual"), enumerate(res.residuals, 1))
    summary = {"iterations": res.iterations, "residual": res.residual, "converged": res.converged}
    if not res.converged:
        raise RuntimeAlarm("picard iteration did not converge", {"kind": "non_convergence", **summary})
    return summary


def run_estimate(cfg, out):
    p = cfg.params
    records = []
    for sigma in p["sigmas"]:
        g = DensityGrid2D.gaussian(sigma, p["h"] * min(sigma, 1.0))
        params = {"sigma": sigma, "h": g.h}
        ent = estimators.entropy(g)
        records.append({"name": "entropy", "value": ent.value, "stderr": ent.stderr, "method": ent.method,
                        "params": {**params, "exact": -math.log(2 * math.pi * math.e * sigma**2)}})
        records.append({"name": "fisher", "value": estimators.fisher(g), "stderr": 0.0, "method": "grid",
                        "params": {**params, "exact": 2 / sigma**2}})
        lsi = bounds.logsobolev_check(g)
        records.append({"name": "logsobolev_gap", "value": lsi.rhs - lsi.lhs, "stderr": 0.0, "method": "grid",
                        "params": params})
    if p["samples"]:
        pts = np.loadtxt(p["samples"], delimiter=",", skiprows=1, ndmin=2)
        ent = estimators.entropy(pts)
        records.append({"name": "entropy", "value": ent.value, "stderr": ent.stderr, "method": ent.method,
                        "params": {"file": p["samples"], "bandwidth": ent.bandwidth, "M": len(pts)}})
    out.json("estimates.json", records)
    return {"records": len(records)}


def run_bounds(cfg, out):
    p = cfg.params
    hp = bounds.HierarchyParams(p["gammaK"], p["T"], p["C0"], p["epsN"], p["IT"], p["k"], p["N"])
    recs = [
        {"name": "lacker_bound", "params": dict(hp.__dict__), "value": bounds.lacker_bound(hp)},
        {"name": "lacker_reverse_bound", "params": dict(hp.__dict__), "value": bounds.lacker_reverse_bound(hp)},
    ]
    for j in range(1, hp.k + 2):
        c = bounds.lacker_coefficients(j, hp.k, hp.T, hp.gammaK)
        recs.append({"name": "lacker_coefficients", "params": {"j": j, "l": hp.k, "T": hp.T, "gammaK": hp.gammaK},
                     "value": {"A": c.A, "B": c.B, "residual": c.residual}})
    if hp.N >= 2 and hp.T > 0:
        cs = cutoff_schedule(hp.N, hp.T, p["theta"])
        recs.append({"name": "cutoff_schedule", "params": {"N": hp.N, "T": hp.T, "theta": p["theta"]},
                     "value": dict(cs.__dict__)})
    out.json("bounds.json", recs)
    return {"lacker_bound": recs[0]["value"], "lacker_reverse_bound": recs[1]["value"]}


def run_suite(cfg, out):
    from .suite import run_identity_suite

    rows = run_identity_suite(quick=cfg.params["quick"])
    out.csv("suite.csv", ("check", "passed", "value", "tolerance"), rows)
    failed = [r[0] for r in rows if not r[1]]
    return {"checks": len(rows), "failed": failed}


class RuntimeAlarm(RuntimeError):
    def __init__(self, msg, report):
        super().__init__(msg)
        self.report = report


_EXPERIMENTS = [
    Experiment("simulate", "simulate", "N-particle system, diagnostics per seed", run_simulate,
               ("kernel", "sim", "seeds"), INIT_PARAMS + (Param("track_virial", "bool", False),)),
    Experiment("dyson-gap", "simulate", "Dyson particles: per-seed minimum gap and its quantile", run_dyson_gap,
               ("kernel", "sim", "seeds"),
               (Param("init", "str", "lattice", choices=("gaussian", "uniform", "lattice")),
                Param("init_scale", "float", 0.5), Param("quantile", "float", 0.01)), family="dyson"),
    Experiment("pde", "pde", "Keller-Segel finite-volume run with functional trace", lambda c, o: _ks_run(c, o, False),
               ("kernel", "grid"), PDE_PARAMS, family="keller_segel"),
    Experiment("ks-blowup", "pde", "Keller-Segel run with the blow-up monitor", lambda c, o: _ks_run(c, o, True),
               ("kernel", "grid"),
               PDE_PARAMS + (Param("linf_guard", "float", 0.05, "alarm when max rho exceeds this / h^2"),
                             Param("slope_tol", "float", 0.1)), family="keller_segel"),
    Experiment("picard", "pde", "Damped Picard iteration for the nonlinear Fokker-Planck flow", run_picard,
               ("kernel", "grid"),
               (Param("sigma0", "float", 1.0), Param("T", "float", REQUIRED), Param("dt", "float", REQUIRED),
                Param("tol", "float", 1e-4), Param("max_iter", "int", 50), Param("omega", "float", 0.5),
                Param("record_every", "int", 10))),
    Experiment("mckean", "mckean", "Mollified M-sample nonlinear ensemble", run_mckean,
               ("kernel", "sim", "seeds"),
               INIT_PARAMS + (Param("M", "int", REQUIRED), Param("mollifier_delta", "float", None),
                              Param("method", "str", "auto", choices=("auto", "pairwise", "mesh")),
                              Param("mesh_h", "float", None))),
    Experiment("chaos", "chaos", "Synchronous-coupling chaos table N,error,stderr", run_chaos,
               ("kernel", "sim", "seeds"),
               INIT_PARAMS + (Param("N_list", "ints", REQUIRED), Param("M", "int", 200_000),
                              Param("mollifier_delta", "float", 0.05), Param("mesh_h", "float", 0.05),
                              Param("reference_seed", "int", -1, "negative: derived from the first seed"))),
    Experiment("estimate", "estimate", "Estimator records on Gaussian grids and optional samples", run_estimate,
               (), (Param("sigmas", "floats", [0.5, 1.0, 2.0]), Param("h", "float", 1 / 32),
                    Param("samples", "str", "", "CSV of sample points with a header line"))),
    Experiment("bounds", "bounds", "Hierarchy bounds, coefficients and cut-off schedule", run_bounds, (),
               (Param("gammaK", "float", REQUIRED), Param("T", "float", REQUIRED), Param("C0", "float", 0.0),
                Param("epsN", "float", 0.0), Param("IT", "float", REQUIRED), Param("k", "int", 1),
                Param("N", "int", REQUIRED), Param("theta", "float", 0.5))),
    Experiment("identity-suite", "suite", "Pass/fail table of invariant checks across modules", run_suite, (),
               (Param("quick", "bool", True),)),
]


def registry() -> list[Experiment]:
    return sorted(_EXPERIMENTS, key=lambda e: e.name)


def get(name: str) -> Experiment:
    for e in _EXPERIMENTS:
        if e.name == name:
            return e
    raise KeyError(name)
