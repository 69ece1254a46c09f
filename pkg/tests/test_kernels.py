import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singmf.kernels import (
    ConfigError,
    ConfinementSpec,
    KernelSpec,
    confinement_drift,
    cutoff_schedule,
    eval_kernel,
    mollified_kernel,
    transport_constant,
)
from singmf.particles import interaction_batch

coord = st.floats(-50, 50, allow_nan=False).filter(lambda v: abs(v) > 1e-6)
chi = st.floats(-5, 5, allow_nan=False).filter(lambda c: c == 0 or abs(c) > 1e-6)


def families(c=1.0):
    return [
        KernelSpec.keller_segel(c),
        KernelSpec.biot_savart(c),
        KernelSpec.riesz(c, 1.0, 3),
        KernelSpec.riesz(c, 0.5, 1),
        KernelSpec.relaxed_ks(c, 0.7),
        KernelSpec.dyson(c),
    ]


REGS = [("none", 0.0), ("eps", 0.3), ("cap", 0.5), ("hard_truncate", 0.5)]
ALL = [k.regularized(*r) for k in families() for r in REGS]


def test_keller_segel_value():
    assert np.allclose(eval_kernel(KernelSpec.keller_segel(1), [3.0, 4.0]), [0.12, 0.16], rtol=0, atol=1e-15)


def test_biot_savart_value():
    assert np.allclose(eval_kernel(KernelSpec.biot_savart(2), [1.0, 0.0]), [0.0, 2.0], rtol=0, atol=1e-15)


def test_riesz_value():
    got = eval_kernel(KernelSpec.riesz(-1, 1, 3), [2.0, 0.0, 0.0])
    assert np.allclose(got, [-0.25, 0, 0], rtol=0, atol=1e-15)


def test_relaxed_and_dyson_values():
    # chi x / |x|^(2 - eta) with |x| = 5, eta = 1: (3, 4) / 5
    assert np.allclose(eval_kernel(KernelSpec.relaxed_ks(1, 1.0), [3.0, 4.0]), [0.6, 0.8])
    assert np.allclose(eval_kernel(KernelSpec.dyson(2.0), [-4.0]), [-0.5])


@pytest.mark.parametrize("spec", ALL, ids=str)
def test_zero_at_origin(spec):
    assert np.array_equal(eval_kernel(spec, np.zeros(spec.d)), np.zeros(spec.d))


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        eval_kernel(KernelSpec.keller_segel(1), [1.0, 2.0, 3.0])
    with pytest.raises(ConfigError):
        eval_kernel(KernelSpec.dyson(1), [1.0, 2.0])


def test_invalid_parameters():
    with pytest.raises(ConfigError):
        KernelSpec("vortex", 1.0)
    with pytest.raises(ConfigError):
        KernelSpec.relaxed_ks(1.0, 2.0)
    with pytest.raises(ConfigError):
        KernelSpec.riesz(1.0, -0.5, 3)
    with pytest.raises(ConfigError):
        KernelSpec.keller_segel(1.0).regularized("eps", 0.0)


def test_keller_segel_alias():
    k = KernelSpec("keller_segel", 1.5)
    assert (k.family, k.s, k.d) == ("riesz", 0.0, 2)
    assert k == KernelSpec.riesz(1.5, 0.0, 2)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(ALL), st.lists(coord, min_size=3, max_size=3), chi)
def test_antisymmetry(spec, xs, c):
    spec = KernelSpec(spec.family, c, spec.s, spec.d, spec.eta, spec.regularization)
    x = np.array(xs[: spec.d])
    assert np.array_equal(eval_kernel(spec, -x), -eval_kernel(spec, x))


@settings(max_examples=200, deadline=None)
@given(coord, coord, chi)
def test_vortex_orthogonality(a, b, c):
    x = np.array([a, b])
    v = eval_kernel(KernelSpec.biot_savart(c), x)
    assert abs(x @ v) <= 1e-15 * np.linalg.norm(x) * np.linalg.norm(v) + 1e-300


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(families()), st.lists(coord, min_size=3, max_size=3))
def test_eps_converges_to_unregularized(spec, xs):
    x = np.array(xs[: spec.d])
    base = eval_kernel(spec, x)
    errs = [np.abs(eval_kernel(spec.regularized("eps", e), x) - base).max() for e in (1e-1, 1e-3, 1e-5, 1e-7)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    # replacing |x|^2 by eps + |x|^2 changes K by a relative p eps / |x|^2 with exponent p <= 2
    assert errs[-1] <= 2 * 1e-7 / (x @ x) * np.abs(base).max() + 1e-300


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(families()), st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(0.01, 10))
def test_cap_dominance(spec, xs, A):
    x = np.array(xs[: spec.d])
    raw = np.linalg.norm(eval_kernel(spec, x))
    for kind in ("cap", "hard_truncate"):
        got = np.linalg.norm(eval_kernel(spec.regularized(kind, A), x))
        assert got <= min(A, raw) * (1 + 1e-12)


def test_cap_is_radial_rescaling_and_truncate_is_indicator():
    k = KernelSpec.keller_segel(1.0)
    x = np.array([0.01, 0.0])  # |K| = 100
    assert np.allclose(eval_kernel(k.regularized("cap", 2.0), x), [2.0, 0.0])
    assert np.array_equal(eval_kernel(k.regularized("hard_truncate", 2.0), x), [0.0, 0.0])
    far = np.array([10.0, 0.0])
    assert np.array_equal(eval_kernel(k.regularized("hard_truncate", 2.0), far), eval_kernel(k, far))


def test_eps_is_continuous_at_origin():
    k = KernelSpec.keller_segel(1.0).regularized("eps", 0.5)
    assert np.linalg.norm(eval_kernel(k, [1e-9, 0.0])) < 1e-8


@pytest.mark.parametrize("spec", ALL, ids=str)
def test_compiled_pairs_match_reference(spec):
    X = np.random.default_rng(1).normal(size=(40, spec.d))
    ref = np.stack([eval_kernel(spec, X[i] - X).sum(axis=0) for i in range(len(X))]) / len(X)
    assert np.allclose(interaction_batch(X, spec), ref, rtol=1e-12, atol=1e-13)


def test_sup_norm_of_eps_kernel():
    # |x| / (eps + |x|^2) peaks at |x| = sqrt(eps) with value 1 / (2 sqrt(eps))
    k = KernelSpec.keller_segel(3.0).regularized("eps", 0.25)
    assert math.isclose(k.sup_norm(), 3.0, rel_tol=1e-14)
    r = np.linspace(1e-3, 5, 200001)
    numeric = np.max(np.linalg.norm(eval_kernel(k, np.stack([r, 0 * r], -1)), axis=1))
    assert math.isclose(numeric, k.sup_norm(), rel_tol=1e-8)
    assert transport_constant(k) == 2 * 9.0
    assert not KernelSpec.keller_segel(1.0).bounded
    with pytest.raises(ConfigError):
        transport_constant(KernelSpec.keller_segel(1.0))


@pytest.mark.parametrize("spec", [KernelSpec.keller_segel(1.0), KernelSpec.biot_savart(1.0)], ids=str)
def test_mollified_closed_form_matches_quadrature(spec):
    # the Gauss-Hermite path on the eps-free kernel is only accurate away from the origin
    x = np.array([[1.5, -0.5], [2.0, 1.0]])
    delta = 0.2
    closed = mollified_kernel(spec, x, delta)
    quad = mollified_kernel(spec.regularized("cap", 1e12), x, delta, order=40)
    assert np.allclose(closed, quad, rtol=1e-8)


def test_cutoff_examples():
    cs = cutoff_schedule(math.exp(4), 1.0, 0.5)
    assert math.isclose(cs.A_N, math.sqrt(2), rel_tol=1e-14)
    assert cs.admissible
    assert math.isclose(cs.margin, 2 - math.log(2), rel_tol=1e-12)


def test_cutoff_small_n_is_not_admissible():
    # ln 3 - 0.99 ln 3 - ln(0.99 ln 3) = 0.01099 - 0.08399
    cs = cutoff_schedule(3, 10.0, 0.99)
    assert math.isclose(cs.margin, 0.01 * math.log(3) - math.log(0.99 * math.log(3)), rel_tol=1e-12)
    assert math.isclose(cs.margin, -0.0730, abs_tol=1e-4)
    assert not cs.admissible


def test_cutoff_errors():
    with pytest.raises(ConfigError):
        cutoff_schedule(1, 1.0, 0.5)
    with pytest.raises(ConfigError):
        cutoff_schedule(10, 0.0, 0.5)


@given(st.floats(2, 1e12), st.floats(0.01, 100), st.floats(0.01, 0.99))
def test_cutoff_level_formula(N, T, theta):
    cs = cutoff_schedule(N, T, theta)
    assert math.isclose(cs.A_N**2 * T, theta * math.log(N), rel_tol=1e-12)
    assert cs.admissible == (cs.margin > 0)


def test_confinement_examples():
    assert np.array_equal(confinement_drift(ConfinementSpec.quadratic(1.0), [1.0, -2.0]), [-2.0, 4.0])
    assert np.array_equal(confinement_drift(ConfinementSpec(), [3.0, 7.0]), [0.0, 0.0])
    assert np.array_equal(confinement_drift(ConfinementSpec.quadratic(0.0), [5.0, 5.0]), [0.0, 0.0])


@given(st.sampled_from(["smooth_abs", "abs", "half_square"]), st.floats(-5, 5).filter(lambda u: abs(u) > 1e-3))
def test_separable_drift_is_minus_gradient(pot, u):
    conf = ConfinementSpec.separable(pot, 1.5)
    x = np.array([u, -0.5 * u])
    h = 1e-6
    num = np.array([
        -(conf.potential_value(x + h * e) - conf.potential_value(x - h * e)) / (2 * h) for e in np.eye(2)
    ])
    assert np.allclose(confinement_drift(conf, x), num, atol=1e-6)


def test_bounded_derivative_flag():
    assert ConfinementSpec.separable("smooth_abs").bounded_derivative
    assert not ConfinementSpec.separable("half_square").bounded_derivative
    assert not ConfinementSpec.quadratic(1.0).bounded_derivative
    with pytest.raises(ConfigError):
        ConfinementSpec("harmonic")
