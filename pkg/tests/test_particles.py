import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from singmf import _pairs
from singmf.kernels import ConfigError, ConfinementSpec, KernelSpec, eval_kernel
from singmf.particles import (
    CSV_HEADER,
    ExplosionError,
    GaussianInit,
    LatticeInit,
    ParticleEnsemble,
    SimConfig,
    StateError,
    UniformInit,
    coupled_simulate,
    interaction_batch,
    interaction_reference,
    make_rng,
    pair_functionals,
    simulate,
    simulate_batch,
    step,
    tame,
    total_drift,
)

FREE = ConfinementSpec()


def brute_pairs(X, gamma, s):
    g = np.array([np.linalg.norm(X[i] - X[j]) for i in range(len(X)) for j in range(len(X)) if i != j])
    return g.min(), np.sum(g**-gamma), -np.sum(np.log(g**2)), np.sum(g**-s)


# -- total_drift -----------------------------------------------------------------


def test_two_body_drift():
    ens = ParticleEnsemble(np.array([[0.0, 0.0], [1.0, 0.0]]))
    d = total_drift(ens, KernelSpec.keller_segel(1.0), FREE)
    assert np.allclose(d, [[0.5, 0.0], [-0.5, 0.0]], rtol=0, atol=1e-15)


def test_single_particle_feels_only_confinement():
    ens = ParticleEnsemble(np.array([[2.0, 0.0]]))
    for k in (KernelSpec.keller_segel(3.0), KernelSpec.biot_savart(-1.0)):
        assert np.array_equal(total_drift(ens, k, ConfinementSpec.quadratic(1.0)), [[-4.0, 0.0]])


def test_equilateral_vortices_rotate():
    ang = 2 * np.pi * np.arange(3) / 3
    X = np.stack([np.cos(ang), np.sin(ang)], axis=1) + np.array([0.3, -0.2])
    d = total_drift(ParticleEnsemble(X), KernelSpec.biot_savart(1.0), FREE)
    ref = -interaction_reference(X, KernelSpec.biot_savart(1.0))
    assert np.allclose(d, ref, rtol=1e-14, atol=1e-15)
    centred = X - X.mean(axis=0)
    assert np.allclose(np.sum(centred * d, axis=1), 0, atol=1e-15)
    assert abs(np.sum(X * d)) < 1e-15


def test_non_finite_state():
    ens = ParticleEnsemble(np.array([[0.0, np.nan], [1.0, 0.0]]))
    with pytest.raises(StateError):
        total_drift(ens, KernelSpec.keller_segel(1.0), FREE)


def test_kernel_dimension_must_match():
    with pytest.raises(ConfigError):
        interaction_batch(np.zeros((3, 3)), KernelSpec.keller_segel(1.0))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (7, 2), elements=st.floats(-5, 5)), st.sampled_from([
    KernelSpec.keller_segel(1.3), KernelSpec.biot_savart(-0.7), KernelSpec.relaxed_ks(2.0, 1.2),
    KernelSpec.keller_segel(1.0).regularized("cap", 0.8),
]))
def test_drift_matches_brute_force(X, kernel):
    ref = np.zeros_like(X)
    for i in range(len(X)):
        for j in range(len(X)):
            ref[i] += eval_kernel(kernel, X[i] - X[j])
    got = interaction_batch(X, kernel)
    assert np.allclose(got, ref / len(X), rtol=1e-12, atol=1e-12 * (1 + np.abs(ref).max()))


def test_drift_independent_of_threads():
    X = np.random.default_rng(0).normal(size=(4, 200, 2))
    k = KernelSpec.keller_segel(1.0)
    old = _pairs.numba.get_num_threads()
    try:
        _pairs.set_threads(1)
        a = interaction_batch(X, k)
        _pairs.set_threads(_pairs.numba.config.NUMBA_NUM_THREADS)
        b = interaction_batch(X, k)
    finally:
        _pairs.set_threads(old)
    assert np.array_equal(a, b)


# -- step and taming -------------------------------------------------------------


def test_zero_step():
    ens = ParticleEnsemble(np.array([[1.0, 2.0]]), 0.5)
    nxt = step(ens, np.zeros((1, 2)), 0.1, np.zeros((1, 2)))
    assert np.array_equal(nxt.positions, ens.positions)
    assert nxt.t == pytest.approx(0.6)


def test_taming_cap_arithmetic():
    ens = ParticleEnsemble(np.zeros((1, 2)))
    drift = np.array([[6e5, 8e5]])
    nxt = step(ens, drift, 1e-4, np.zeros((1, 2)), taming_cap=10.0)
    assert np.linalg.norm(nxt.positions) == pytest.approx(0.1, rel=1e-14)
    assert np.allclose(nxt.positions / 0.1, [[0.6, 0.8]])


@given(arrays(float, (5, 3), elements=st.floats(-1e8, 1e8)), st.floats(1e-6, 1.0), st.floats(0.1, 10))
def test_tame_never_exceeds_limit(drift, dt, cap):
    out = tame(drift, dt, cap)
    limit = cap / math.sqrt(dt)
    norms = np.linalg.norm(out, axis=1)
    assert np.all(norms <= limit * (1 + 1e-12))
    small = np.linalg.norm(drift, axis=1) <= limit
    assert np.array_equal(out[small], drift[small])


def test_step_variance():
    M, dt = 100_000, 1e-3
    z = make_rng(11).standard_normal((M, 2))
    ens = ParticleEnsemble(np.zeros((M, 2)))
    disp = step(ens, np.zeros((M, 2)), dt, z).positions
    var = disp.var(axis=0)
    se = 2 * dt * math.sqrt(2 / (M - 1))
    assert np.all(np.abs(var - 2 * dt) < 3 * se)


def test_default_taming_level():
    assert SimConfig(N=2, d=3, dt=0.01, T=1).cap == pytest.approx(2 * math.sqrt(3))
    assert SimConfig(N=2, d=2, dt=0.01, T=1, taming_cap=5.0).cap == 5.0
    assert SimConfig(N=2, d=2, dt=0.01, T=1, tame=False).cap is None


@pytest.mark.parametrize("kw", [dict(dt=2.0, T=1.0), dict(dt=0.1, T=1.0, record_every=11), dict(N=0),
                                dict(dt=0.0), dict(taming_cap=-1.0), dict(seed=2**64)])
def test_sim_config_rejects(kw):
    base = dict(N=4, d=2, dt=0.1, T=1.0)
    with pytest.raises(ConfigError):
        SimConfig(**{**base, **kw})


# -- samplers and streams ---------------------------------------------------------


def test_samplers():
    rng = make_rng(0)
    assert GaussianInit(2.0)(rng, 5, 3).shape == (5, 3)
    u = UniformInit(0.5)(rng, 1000, 2)
    assert u.min() >= -0.5 and u.max() <= 0.5
    lat = LatticeInit(0.5)(None, 16, 1)
    assert np.allclose(np.diff(lat[:, 0]), 0.5) and abs(lat.mean()) < 1e-15
    assert LatticeInit(1.0)(None, 9, 2).shape == (9, 2)


def test_streams_are_seed_keyed():
    a = make_rng(2**64 - 1).standard_normal(4)
    b = make_rng(2**64 - 1).standard_normal(4)
    c = make_rng(2**64 - 2).standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


# -- simulate ---------------------------------------------------------------------


def test_determinism_and_batch_independence():
    cfg = SimConfig(N=20, d=2, dt=0.01, T=0.3, seed=5, record_every=3)
    k = KernelSpec.keller_segel(1.0)
    batch = simulate_batch(cfg, k, FREE, GaussianInit(), [9, 5, 7])
    recs, final = simulate(cfg, k, FREE, GaussianInit())
    assert np.array_equal(final.positions, batch.final[1])
    assert [r.row() for r in recs] == [r.row() for r in batch.records(1)]
    assert len(recs) == 11 and recs[-1].t == pytest.approx(0.3)


def test_record_every_and_steps():
    cfg = SimConfig(N=3, d=1, dt=0.3, T=1.0)  # ceil(1/0.3) = 4 steps
    traj = simulate_batch(cfg, KernelSpec.dyson(-1.0), FREE, GaussianInit())
    assert cfg.n_steps == 4 and len(traj.t) == 5
    assert tuple(CSV_HEADER) == ("t", "second_moment", "min_gap", "neg_moment", "log_gap_sum", "riesz_H")


def test_brownian_second_moment():
    cfg = SimConfig(N=1, d=2, dt=0.01, T=1.0, record_every=5)
    traj = simulate_batch(cfg, KernelSpec.keller_segel(0.0), FREE, GaussianInit(), range(500))
    slope = np.polyfit(traj.t, traj.second_moment.mean(axis=0), 1)[0]
    assert slope == pytest.approx(4.0, rel=0.05)


def test_explosion_alarm():
    cfg = SimConfig(N=2, d=1, dt=0.01, T=1.0, guard_radius=1.0)
    with pytest.raises(ExplosionError) as e:
        simulate_batch(cfg, KernelSpec.dyson(0.0), FREE, GaussianInit(3.0), [1])
    assert e.value.report["seed"] == 1 and e.value.report["max_abs"] > 1.0


@pytest.mark.parametrize("kernel,N,expected", [
    (KernelSpec.keller_segel(1.5), 24, 1.5 * 23 / 2),
    (KernelSpec.dyson(-2.0), 16, -2.0 * 15 / 2),
])
def test_pathwise_virial(kernel, N, expected):
    cfg = SimConfig(N=N, d=kernel.d, dt=1e-3, T=0.05)
    traj = simulate_batch(cfg, kernel, FREE, GaussianInit(), [1, 2], track_virial=True)
    assert np.max(np.abs(traj.virial / expected - 1)) < 1e-10


def test_vortex_virial_vanishes():
    cfg = SimConfig(N=32, d=2, dt=1e-3, T=0.05)
    traj = simulate_batch(cfg, KernelSpec.biot_savart(1.0), FREE, GaussianInit(), [1, 2], track_virial=True)
    assert np.max(np.abs(traj.virial) / traj.virial_scale) < 1e-12


@settings(max_examples=30, deadline=None)
@given(arrays(float, (6, 1), elements=st.floats(-10, 10), unique=True), st.floats(-5, 5))
def test_dyson_identity_any_state(X, c):
    if np.min(np.abs(X[:, None, 0] - X[None, :, 0]) + np.eye(6)) < 1e-3:
        return
    inter = interaction_batch(X, KernelSpec.dyson(1.0)) * len(X)
    total = float(np.sum(X * inter))
    assert total == pytest.approx(6 * 5 / 2, rel=1e-10)


def log_gap_gradient(X):
    """Gradient of -sum_{i != j} ln|x_i - x_j|^2 with respect to each x_i."""
    diff = X[:, None, :] - X[None, :, :]
    r2 = np.sum(diff * diff, axis=-1)
    np.fill_diagonal(r2, np.inf)
    return -4 * np.sum(diff / r2[..., None], axis=1)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (8, 2), elements=st.floats(-4, 4)))
def test_vortex_drift_conserves_log_gap_sum(X):
    diff = X[:, None, :] - X[None, :, :]
    gaps = np.sqrt(np.sum(diff * diff, axis=-1)) + np.eye(8)
    if gaps.min() < 1e-2:
        return
    v = -interaction_batch(X, KernelSpec.biot_savart(1.0))
    g = log_gap_gradient(X)
    assert abs(np.sum(g * v)) <= 1e-12 * np.sum(np.abs(g) * np.abs(v).max())


def test_vortex_log_gap_sum_has_no_step_drift():
    # E[H(x + dX) - H(x)] for one Euler step from a fixed state: the drift part vanishes and
    # the Laplacian of ln|r|^2 is zero, so the mean increment is O(dt^2) away from collisions
    X = LatticeInit(1.0)(None, 9, 2)
    k = KernelSpec.biot_savart(1.0)
    dt, M = 1e-4, 4000
    z = make_rng(21).standard_normal((M, 9, 2))
    Y = X + dt * -interaction_batch(X, k) + math.sqrt(2 * dt) * z
    H0 = pair_functionals(ParticleEnsemble(X), 1.0, 1.0).log_gap_sum
    H = np.array([pair_functionals(ParticleEnsemble(y), 1.0, 1.0).log_gap_sum for y in Y])
    inc = H - H0
    assert abs(inc.mean()) <= 2 * inc.std(ddof=1) / math.sqrt(len(inc))


def test_exchangeability():
    rng = np.random.default_rng(3)
    X0 = rng.normal(size=(12, 2))
    noise = rng.normal(size=(20, 12, 2))
    perm = rng.permutation(12)
    k = KernelSpec.keller_segel(1.0)

    def run(X, Z):
        ens = ParticleEnsemble(X.copy())
        for z in Z:
            ens = step(ens, total_drift(ens, k, ConfinementSpec.quadratic(0.5)), 0.01, z, 2 * math.sqrt(2))
        return ens.positions

    a = run(X0, noise)
    b = run(X0[perm], noise[:, perm])
    assert np.allclose(a[perm], b, rtol=0, atol=1e-13)


# -- pair functionals --------------------------------------------------------------


def test_two_point_functionals():
    r = pair_functionals(ParticleEnsemble(np.array([[0.0, 0.0], [1.0, 0.0]])), 1.0, 1.0)
    assert r.neg_moment == 2.0 and r.log_gap_sum == 0.0 and r.min_gap == 1.0 and r.riesz_H == 2.0
    assert r.second_moment == 1.0 and not r.collision


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 2), elements=st.floats(-3, 3)), st.floats(0.1, 2.5), st.floats(0.1, 2.5))
def test_functionals_match_brute_force(X, gamma, s):
    gaps = [np.linalg.norm(X[i] - X[j]) for i in range(3) for j in range(3) if i != j]
    if min(gaps) < 1e-6:
        return
    r = pair_functionals(ParticleEnsemble(X), gamma, s)
    ref = brute_pairs(X, gamma, s)
    assert r.min_gap == pytest.approx(ref[0], rel=1e-14)
    assert r.neg_moment == pytest.approx(ref[1], rel=1e-12)
    assert r.log_gap_sum == pytest.approx(ref[2], rel=1e-12, abs=1e-12)
    assert r.riesz_H == pytest.approx(ref[3], rel=1e-12)


def test_collision_flags_infinite():
    r = pair_functionals(ParticleEnsemble(np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 2.0]])), 1.0, 1.0)
    assert r.collision and r.min_gap == 0.0
    assert math.isinf(r.neg_moment) and math.isinf(r.log_gap_sum) and math.isinf(r.riesz_H)


# -- coupling -----------------------------------------------------------------------


def test_coupling_with_itself():
    cfg = SimConfig(N=16, d=2, dt=0.01, T=0.3)
    k = KernelSpec.keller_segel(1.0)
    res = coupled_simulate(cfg, k, k, FREE, GaussianInit(), [1, 2])
    assert np.all(res.sup_distance == 0)
    assert np.array_equal(res.a.final, res.b.final)


def test_inactive_cap_leaves_coupling_exact():
    cfg = SimConfig(N=16, d=2, dt=0.01, T=0.3)
    k = KernelSpec.biot_savart(1.0)
    res = coupled_simulate(cfg, k, k.regularized("cap", 1e12), FREE, GaussianInit(), [3])
    assert np.all(res.sup_distance == 0)


def test_coupling_distance_is_running_max():
    cfg = SimConfig(N=8, d=2, dt=0.01, T=0.5)
    res = coupled_simulate(cfg, KernelSpec.keller_segel(1.0), KernelSpec.keller_segel(2.0), FREE, GaussianInit(),
                           [4])
    d = res.sup_distance[0]
    assert d[0] == 0 and d[-1] > 0 and np.all(np.diff(d) >= 0)


def test_coupling_dimension_mismatch():
    cfg = SimConfig(N=4, d=2, dt=0.1, T=1.0)
    with pytest.raises(ConfigError):
        coupled_simulate(cfg, KernelSpec.keller_segel(1.0), KernelSpec.dyson(1.0), FREE, GaussianInit())
