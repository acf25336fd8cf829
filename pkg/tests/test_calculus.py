import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from fracext.assembly import assemble_weighted_elliptic, from_matrix
from fracext.calculus import (
    CalculusError,
    FormError,
    QuadratureScheme,
    dirichlet_form_check,
    frac_power_apply_balakrishnan,
    frac_power_apply_spectral,
    frac_power_matrix,
    phi_of_T,
    resolvent_apply,
    sectoriality_scan,
    semigroup_apply,
    spectrum,
)
from fracext.grid import CoeffField, GridSpec, WeightField


def lap1d_op(n_interior, weight=None):
    g = GridSpec(1, ((0, n_interior + 1),), n_interior + 2)
    w = None if weight is None else WeightField.from_function(g, weight, eps=0.0)
    return assemble_weighted_elliptic(g, CoeffField.matrix(g, np.eye(1)), w)


TRI = from_matrix([[2.0, 1.0], [0.0, 3.0]])


# ------------------------------------------------------------- spectrum


def test_spectrum_examples():
    assert np.allclose(spectrum(from_matrix(np.diag([3.0, 1.0, 2.0]))).values, [1, 2, 3])
    assert np.allclose(spectrum(TRI).values, [2, 3])
    n = 12
    lam = spectrum(lap1d_op(n)).values.real
    k = np.arange(1, n + 1)
    assert np.allclose(lam, 4 * np.sin(k * np.pi / (2 * (n + 1))) ** 2, atol=1e-12)


def test_spectrum_flags_defective():
    J = from_matrix([[1.0, 1.0], [0.0, 1.0]])
    assert spectrum(J).defective
    with pytest.raises(CalculusError):
        frac_power_apply_spectral(J, 0.5, np.ones(2))


def test_spectrum_cap():
    with pytest.raises(CalculusError):
        spectrum(from_matrix(np.eye(5)), cap=4)


# ------------------------------------------------------------ resolvent


def test_resolvent_examples(rng):
    v = rng.standard_normal(3)
    assert np.allclose(resolvent_apply(from_matrix(np.eye(3)), -1.0, v, convention="T-z"), v / 2)
    assert np.allclose(resolvent_apply(from_matrix(np.eye(3)), -1.0, v), -v / 2)
    v2 = rng.standard_normal(2)
    assert np.allclose(resolvent_apply(from_matrix(np.diag([1.0, 4.0])), 0.0, v2, convention="T-z"), v2 * [1, 0.25])
    B = rng.standard_normal((8, 8))
    A = from_matrix(B @ B.T + 8 * np.eye(8))
    z = -0.5 + 0.5j
    x = resolvent_apply(A, z, v2.repeat(4))
    assert np.linalg.norm((z * np.eye(8) - A.dense()) @ x - v2.repeat(4)) <= 1e-12 * np.linalg.norm(v2.repeat(4))
    with pytest.raises(CalculusError):
        resolvent_apply(from_matrix(np.diag([1.0, 4.0])), 4.0, v2)


def test_resolvent_identity(rng):
    T = lap1d_op(10)
    v = rng.standard_normal(T.n)
    for z1, z2 in [(-1 + 2j, 3j), (-0.3, -2 - 1j)]:
        lhs = resolvent_apply(T, z1, v) - resolvent_apply(T, z2, v)
        rhs = (z2 - z1) * resolvent_apply(T, z1, resolvent_apply(T, z2, v))
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(v)


def test_sectoriality_examples():
    rep = sectoriality_scan(from_matrix(np.eye(2)), math.pi / 2)
    assert rep.passed and rep.c_theta <= 1 + 1e-12
    assert math.isfinite(sectoriality_scan(from_matrix(np.diag([1.0, 10.0])), 3 * math.pi / 4).c_theta)
    J = sectoriality_scan(from_matrix([[1.0, 1.0], [0.0, 1.0]]), 3 * math.pi / 4)
    N = sectoriality_scan(from_matrix(np.eye(2)), 3 * math.pi / 4)
    assert J.passed and math.isfinite(J.c_theta)
    a = np.array([p[1] for p in J.sampled_points])
    b = np.array([p[1] for p in N.sampled_points])
    # the Jordan block dominates the normal matrix with the same spectrum pointwise
    assert np.all(a >= b * (1 - 1e-12)) and np.any(a > 1.1 * b)
    with pytest.raises(CalculusError):
        sectoriality_scan(from_matrix(np.eye(2), hint=0.5), 0.4)


# ------------------------------------------------------------ semigroup


def test_semigroup_examples(rng):
    v = rng.standard_normal(2)
    assert np.array_equal(semigroup_apply(TRI, 0.0, v), v)
    a = np.array([0.5, 2.0])
    assert np.allclose(semigroup_apply(from_matrix(np.diag(a)), 1.0, v), np.exp(-a) * v)
    lam, V = np.linalg.eig(TRI.dense())
    ref = (V @ np.diag(np.exp(-0.7 * lam)) @ np.linalg.solve(V, v)).real
    assert np.allclose(semigroup_apply(TRI, 0.7, v), ref, atol=1e-10)
    with pytest.raises(CalculusError):
        semigroup_apply(TRI, -1.0, v)


@given(st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_semigroup_law(s, t):
    g = GridSpec(2, ((0, 1), (0, 1)), 6)
    T = assemble_weighted_elliptic(g, CoeffField.matrix(g, [[2, 0.5], [-0.5, 2]])).scaled(0.05)
    v = np.linspace(-1, 1, T.n)
    lhs = semigroup_apply(T, s + t, v)
    rhs = semigroup_apply(T, s, semigroup_apply(T, t, v))
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(v)


@given(st.floats(0.0, 50.0))
def test_contractivity_and_positivity(t):
    T = lap1d_op(12, weight=lambda p: 1 + p[:, 0])
    v = np.abs(np.sin(np.arange(T.n)))
    out = semigroup_apply(T, t, v)
    assert T.wnorm(out) <= T.wnorm(v) * (1 + 1e-12)
    assert out.min() >= -1e-10 * np.linalg.norm(v)


# ------------------------------------------------------ fractional powers


@pytest.mark.parametrize("sigma", [0.1, 0.25, 0.5, 0.9])
def test_balakrishnan_normalization(sigma):
    v = np.array([1.0, -2.0, 0.5])
    assert np.allclose(frac_power_apply_balakrishnan(from_matrix(np.eye(3)), sigma, v), v, rtol=1e-10)


def test_diag_square_root_both_routes():
    D = from_matrix(np.diag([1.0, 4.0]))
    v = np.array([0.3, -1.7])
    assert np.allclose(frac_power_apply_spectral(D, 0.5, v), [0.3, -3.4], rtol=1e-14)
    assert np.allclose(frac_power_apply_balakrishnan(D, 0.5, v), [0.3, -3.4], rtol=1e-8)
    assert np.allclose(frac_power_apply_spectral(from_matrix(np.eye(2)), 0.37, v), v)


def test_triangular_square_root():
    R = frac_power_apply_spectral(TRI, 0.5, np.eye(2))
    assert np.allclose(np.diag(R), [math.sqrt(2), math.sqrt(3)])
    assert abs(R[1, 0]) < 1e-14
    assert np.allclose(R @ R, TRI.dense(), atol=1e-10)


def test_laplacian_quarter_power_routes_agree(rng):
    T = lap1d_op(16)
    v = rng.standard_normal(T.n)
    a = frac_power_apply_balakrishnan(T, 0.25, v)
    b = frac_power_apply_spectral(T, 0.25, v)
    assert np.linalg.norm(a - b) <= 1e-6 * np.linalg.norm(b)


def test_power_law_and_sigma_one(rng):
    T = lap1d_op(10, weight=lambda p: np.exp(0.1 * p[:, 0]))
    v = rng.standard_normal(T.n)
    for route in ("spectral", "balakrishnan"):
        P3 = frac_power_matrix(T, 0.3, route)
        P4 = frac_power_matrix(T, 0.4, route)
        P7 = frac_power_matrix(T, 0.7, route)
        assert np.linalg.norm(P3 @ (P4 @ v) - P7 @ v) <= 1e-6 * np.linalg.norm(P7 @ v)
    assert np.array_equal(frac_power_matrix(T, 1.0), T.dense())


def test_periodic_kernel_preserved():
    g = GridSpec(1, ((0, 1),), 17, "periodic")
    T = assemble_weighted_elliptic(g, CoeffField.matrix(g, np.eye(1)))
    for s in (0.2, 0.5, 0.8):
        assert np.abs(frac_power_apply_balakrishnan(T, s, np.ones(T.n))).max() < 1e-8
        assert np.abs(frac_power_apply_spectral(T, s, np.ones(T.n))).max() < 1e-8


def test_balakrishnan_rejects_sigma():
    with pytest.raises(CalculusError):
        frac_power_apply_balakrishnan(TRI, 1.0, np.ones(2))
    with pytest.raises(CalculusError):
        frac_power_apply_spectral(TRI, 1.5, np.ones(2))


def test_quadrature_scheme_validation():
    with pytest.raises(ValueError):
        QuadratureScheme(nodes=4)
    with pytest.raises(ValueError):
        QuadratureScheme(lower_cut=1.0, upper_cut=0.5)
    with pytest.raises(ValueError):
        QuadratureScheme(substitution="double-exponential")
    assert QuadratureScheme().per_octave == 2


def test_explicit_cuts_do_not_change_result(rng):
    T = lap1d_op(8)
    v = rng.standard_normal(T.n)
    a = frac_power_apply_balakrishnan(T, 0.4, v)
    b = frac_power_apply_balakrishnan(T, 0.4, v, QuadratureScheme(lower_cut=1e-10, upper_cut=1e4))
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


# ------------------------------------------------------------------ phi


def test_phi_of_T_examples(rng):
    T = lap1d_op(6).scaled(0.2)
    v = rng.standard_normal(T.n)
    r = phi_of_T(T, lambda z: np.exp(-z) - np.exp(-2 * z), v, decay=1.0)
    ref = semigroup_apply(T, 1.0, v) - semigroup_apply(T, 2.0, v)
    assert np.allclose(r.value, ref, atol=1e-8)
    r = phi_of_T(T, lambda z: z * np.exp(-z), v, decay=1.0)
    assert np.allclose(r.value, T.dense() @ semigroup_apply(T, 1.0, v), atol=1e-8)
    assert math.isfinite(r.bound_ratio)
    r = phi_of_T(from_matrix([[3.0]]), lambda z: z * np.exp(-z), np.array([2.0]), decay=1.0)
    assert r.value[0] == pytest.approx(2 * 3 * math.exp(-3), rel=1e-10)
    with pytest.raises(CalculusError):
        phi_of_T(T, lambda z: z, v)


def test_phi_linear(rng):
    T = lap1d_op(5)
    u, v = rng.standard_normal((2, T.n))
    f = lambda x: phi_of_T(T, lambda z: z / (1 + z) ** 2, x, decay=1.0).value
    assert np.allclose(f(2 * u - v), 2 * f(u) - f(v), atol=1e-10)


# ------------------------------------------------------------------ form


def test_form_symmetric_K_one():
    rep = dirichlet_form_check(lap1d_op(10), samples=2000)
    assert rep.alpha0 == 0 and rep.K == pytest.approx(1.0, abs=1e-10)
    assert rep.angle == pytest.approx(math.pi / 4)


def test_form_nonsymmetric_bounded_by_ratio():
    g = GridSpec(2, ((0, 1), (0, 1)), 7)
    A = CoeffField.matrix(g, lambda p: np.where(p[:, :1, None] < 0.5, 1.0, 2.0) * np.eye(2)[None]
                          + np.where(p[:, :1, None] < 0.5, 0.0, 0.5) * np.array([[0, 1], [-1, 0]])[None])
    T = assemble_weighted_elliptic(g, A)
    rep = dirichlet_form_check(T, samples=10_000)
    assert rep.K_sampled <= A.Lam / A.lam


def test_form_dominant_skew():
    g = GridSpec(2, ((0, 1), (0, 1)), 12)
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    A = CoeffField.matrix(g, lambda p: np.eye(2)[None] + 10 * np.sign(p[:, 0] - 0.5)[:, None, None] * J[None])
    rep = dirichlet_form_check(assemble_weighted_elliptic(g, A))
    assert rep.K > 5
    u, v = rep.worst_pair
    S = assemble_weighted_elliptic(g, A).stiffness().toarray()
    assert abs(v @ S @ u) == pytest.approx(rep.K * math.sqrt((u @ S @ u) * (v @ S @ v)), rel=1e-8)


def test_form_rejects_negative():
    with pytest.raises(FormError):
        dirichlet_form_check(from_matrix(np.diag([1.0, -1.0])), samples=100)
