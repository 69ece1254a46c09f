"""Acceptance criteria C1-C13 at their stated tolerances.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the lines
are repeated in the pytest terminal summary.
"""
import json
import math
import subprocess
import sys
from pathlib import Path


from singmf import studies
from singmf.bounds import HierarchyParams, lacker_bound, lacker_reverse_bound
from singmf.harness.output import sha256_file
from singmf.harness.registry import registry


def test_c1_vortex_moment_identity(criterion):
    r = studies.vortex_moment()
    ok = r["rel_error"] < 0.05 and r["virial_ratio"] <= 1e-12 and r["seconds"] < 120
    detail = f"slope {r['slope']:.2f} vs {r['expected']:.0f} (rel {r['rel_error']:.4f}), virial {r['virial_ratio']:.1e}, {r['seconds']:.0f}s"
    assert criterion("C1", ok, detail)


def test_c2_keller_segel_moment_identity(criterion):
    small = studies.ks_moment(N=50)
    large = studies.ks_moment(N=500, n_seeds=50, record_every=50)
    seconds = small["seconds"] + large["seconds"]
    ok = small["rel_error"] < 0.05 and large["mean_field_rel_error"] < 0.03 and seconds < 300
    detail = (
        f"N=50 rel {small['rel_error']:.4f}; N=500 per-particle {large['per_particle_slope']:.4f} vs 3 "
        f"(rel {large['mean_field_rel_error']:.4f}), {seconds:.0f}s"
    )
    assert criterion("C2", ok, detail)


def test_c3_dyson_algebraic_identity(criterion):
    r = studies.dyson_identity()
    ok = r["rel_error"] <= 1e-10 and r["seconds"] < 60
    assert criterion("C3", ok, f"max rel error {r['rel_error']:.1e}, {r['seconds']:.0f}s")


def test_c4_dyson_gap_regimes(criterion):
    r = studies.dyson_gaps()
    strong, weak = r["regimes"][-2.0]["q"], r["regimes"][-0.2]["q"]
    ok = strong > 1e-3 and weak < 1e-6 and r["seconds"] < 300
    detail = f"q1% at chi/N=-2: {strong:.2e} (need > 1e-3); at chi/N=-0.2: {weak:.2e} (need < 1e-6), {r['seconds']:.0f}s"
    assert criterion("C4", ok, detail)


def test_c5_sub_coulombic_monotonicity(criterion):
    r = studies.riesz_monotonicity()
    ok = r["max_rise_in_se"] <= 2.0 and r["seconds"] < 120
    detail = f"largest rise {r['max_rise_in_se']:.2f} se, H {r['H_start']:.3f} -> {r['H_end']:.3f}, {r['seconds']:.0f}s"
    assert criterion("C5", ok, detail)


def test_c6_negative_moment_stability(criterion):
    r = studies.ks_negative_moment()
    ok = r["finite"] and r["rel_change"] < 0.1 and r["seconds"] < 300
    detail = f"integral {r['integral_dt']:.4f} vs {r['integral_half_dt']:.4f} (rel {r['rel_change']:.4f}), {r['seconds']:.0f}s"
    assert criterion("C6", ok, detail)


def test_c7_pde_free_energy_dissipation(criterion):
    r = studies.pde_dissipation()
    ok = r["F_max_rate"] <= 1e-3 and r["mass_drift"] < 1e-8 and r["slope_rel_error"] < 0.02 and r["seconds"] < 180
    detail = (
        f"max F rise rate {r['F_max_rate']:.1e}, mass drift {r['mass_drift']:.1e}, "
        f"m2 slope {r['slope']:.4f} (rel {r['slope_rel_error']:.4f}), {r['seconds']:.0f}s"
    )
    assert criterion("C7", ok, detail)


def test_c8_pde_blowup_indicator(criterion):
    r = studies.pde_blowup()
    ok = (
        math.isclose(r["m20"], 1.0, rel_tol=1e-3)
        and r["slope_rel_error"] < 0.02
        and r["blown_up"]
        and r["alarm_time"] < 0.5
        and r["seconds"] < 180
    )
    detail = (
        f"m2 slope {r['slope']:.4f} (rel {r['slope_rel_error']:.4f}), alarm at t={r['alarm_time']:.3f} "
        f"({r['reason']}), zero crossing {r['zero_crossing_estimate']:.4f}, "
        f"reported blow-up time bound {r['blowup_time_bound']:.6f}, {r['seconds']:.0f}s"
    )
    assert criterion("C8", ok, detail)


def test_c9_chaos_rate(criterion):
    r = studies.chaos_rate()
    ok = -0.65 <= r["slope"] <= -0.35 and r["seconds"] < 600
    errs = ", ".join(f"{n}:{e:.4f}" for n, e in zip(r["N"], r["error"]))
    assert criterion("C9", ok, f"log-log slope {r['slope']:.3f} ({errs}), {r['seconds']:.0f}s")


def test_c10_analytic_estimator_suite(criterion):
    r = studies.estimator_suite()
    ok = (
        r["entropy_error"] <= 1e-3
        and r["fisher_rel_error"] <= 0.01
        and r["pinsker_all"]
        and r["logsobolev_all"]
        and r["gn_all"]
        and r["entropy_lower_all"]
        and r["entropy_lower_gap"] <= 1e-3
        and r["seconds"] < 120
    )
    detail = (
        f"entropy err {r['entropy_error']:.1e}, fisher rel {r['fisher_rel_error']:.1e}, pinsker {r['pinsker_all']}, "
        f"log-sobolev {r['logsobolev_all']}, GN {r['gn_all']}, entropy lower {r['entropy_lower_all']} "
        f"(gap at gaussian {r['entropy_lower_gap']:.1e}), {r['seconds']:.0f}s"
    )
    assert criterion("C10", ok, detail)


def test_c11_hierarchy_formulas(criterion):
    r = studies.hierarchy()
    # hand-computed plug-in: gamma=2, T=1, C0=1, eps=1e-4, I_T=4, k=1, N=100
    p = HierarchyParams(2.0, 1.0, 1.0, 1e-4, 4.0, 1, 100)
    tail = math.exp(-2 * 100 * (math.exp(-1) - 0.01) ** 2)
    fwd = 2e-4 * math.exp(2) + 4 * 64 / 6e4 * math.exp(3) + 4 / 2e4 + 101 * tail
    rev = 2e-4 * math.exp(2) + 4 * 9 / 4e4 * math.exp(2) + 4 / 2e4 + 5 * tail
    plug = max(abs(lacker_bound(p) / fwd - 1), abs(lacker_reverse_bound(p) / rev - 1))
    ok = (
        r["A_base"] == 1.0
        and r["B_base_error"] == 0.0
        and r["one_level_error"] <= 1e-8
        and plug <= 1e-12
        and r["mc_tv"] <= r["tv_bound"]
        and r["seconds"] < 600
    )
    detail = (
        f"A base {r['A_base']}, B base err {r['B_base_error']:.1e}, one-level {r['one_level_error']:.1e}, "
        f"plug-in {plug:.1e}, MC TV {r['mc_tv']:.4f} <= {r['tv_bound']:.4f}, {r['seconds']:.0f}s"
    )
    assert criterion("C11", ok, detail)


def test_c12_cross_method_consistency(criterion):
    r = studies.cross_method()
    ok = r["tv"] < 0.05 and r["picard_converged"] and r["seconds"] < 600
    detail = f"TV {r['tv']:.4f}, picard {r['picard_iterations']} iterations, {r['seconds']:.0f}s"
    assert criterion("C12", ok, detail)


# -- C13: byte-identical outputs across thread counts ---------------------------------

KS = "[kernel]\nfamily = keller_segel\nchi = {chi}\n"
SMALL = {
    "simulate": "[experiment]\nname = simulate\n[kernel]\nfamily = biot_savart\nchi = 1.0\n"
    "[sim]\nN = 24\nd = 2\ndt = 0.01\nT = 0.2\nrecord_every = 4\n[seeds]\nfirst = 11\ncount = 3\n"
    "[params]\ntrack_virial = true\n",
    "dyson-gap": "[experiment]\nname = dyson-gap\n[kernel]\nfamily = dyson\nchi = -32.0\n"
    "[confinement]\nkind = quadratic\nbeta = 1.0\n"
    "[sim]\nN = 16\nd = 1\ndt = 0.001\nT = 0.1\nrecord_every = 1\n[seeds]\nfirst = 3\ncount = 4\n",
    "mckean": "[experiment]\nname = mckean\n" + KS.format(chi=1.0)
    + "[sim]\nN = 1\nd = 2\ndt = 0.02\nT = 0.2\n[seeds]\nfirst = 5\ncount = 1\n[params]\nM = 3000\n",
    "chaos": "[experiment]\nname = chaos\n" + KS.format(chi=1.0) + "regularization = eps\nreg_value = 1.0\n"
    "[sim]\nN = 1\nd = 2\ndt = 0.05\nT = 0.3\n[seeds]\nfirst = 1\ncount = 3\n"
    "[params]\nN_list = 8, 16\nM = 4000\n",
    "pde": "[experiment]\nname = pde\n" + KS.format(chi=2.0)
    + "[grid]\nnx = 40\nny = 40\nh = 0.25\n[params]\nT = 0.1\nrecord_dt = 0.02\n",
    "ks-blowup": "[experiment]\nname = ks-blowup\n" + KS.format(chi=6.0)
    + "[grid]\nnx = 48\nny = 48\nh = 0.2\n[params]\nsigma0 = 0.7071067811865476\nT = 0.1\nrecord_dt = 0.02\n",
    "picard": "[experiment]\nname = picard\n" + KS.format(chi=1.0)
    + "[grid]\nnx = 32\nny = 32\nh = 0.3\n[params]\nT = 0.1\ndt = 0.01\n",
    "estimate": "[experiment]\nname = estimate\n[params]\nsigmas = 0.5, 1.0\nh = 0.0625\n",
    "bounds": "[experiment]\nname = bounds\n[params]\ngammaK = 2.0\nT = 1.0\nC0 = 1.0\nepsN = 0.0001\nIT = 4.0\nN = 100\n",
    "identity-suite": "[experiment]\nname = identity-suite\n[params]\nquick = true\n",
}


def run_cli(cfg: Path, out: Path, threads: int) -> subprocess.CompletedProcess:
    cmd = [sys.executable, "-m", "singmf", "run", str(cfg), "--threads", str(threads), "--out", str(out)]
    return subprocess.run(cmd, capture_output=True, text=True, timeout=600)


def snapshot(path: Path) -> dict:
    return {str(p.relative_to(path)): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_small_configs_cover_the_registry():
    assert sorted(SMALL) == sorted(e.name for e in registry())


def test_c13_determinism_across_threads(tmp_path, criterion):
    mismatched, failed = [], []
    for name, text in SMALL.items():
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(text)
        outs = {}
        for threads in (1, 8):
            out = tmp_path / f"{name}-t{threads}"
            proc = run_cli(cfg, out, threads)
            if proc.returncode != 0:
                failed.append(f"{name}@{threads}: exit {proc.returncode} {proc.stderr.strip()[-200:]}")
            outs[threads] = snapshot(out)
        if not outs[1] or outs[1] != outs[8]:
            mismatched.append(name)
            continue
        manifest = json.loads(outs[1]["manifest.json"])
        for rel, digest in manifest["outputs"].items():
            if sha256_file(tmp_path / f"{name}-t1" / rel) != digest:
                mismatched.append(f"{name}:{rel}")
    ok = not mismatched and not failed
    detail = f"{len(SMALL)} experiments at --threads 1 and 8; mismatched {mismatched or 'none'}; failures {failed or 'none'}"
    assert criterion("C13", ok, detail)
