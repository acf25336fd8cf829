import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracext.assembly import assemble_nondivergence, assemble_weighted_elliptic
from fracext.grid import CoeffField, GridSpec, WeightField
from fracext.specio import parse_spec
from fracext.structure import BallFamily, point_balls
from fracext.suites import (
    DEFAULT_SPECS,
    boundary_holder_alpha,
    harnack_family,
    interior_set,
)
from fracext.verify import (
    VerifyError,
    boundary_holder_check,
    c1alpha_probe,
    flag_condition_check,
    fractional_power,
    harnack_ratio,
    holder_fit,
    interior_balls,
    local_boundedness_check,
    smooth_random_fields,
    solve_fractional_dirichlet,
    w2p_global_scan,
    w2p_ratio,
)


def lap1d(points=21, weight=None):
    g = GridSpec(1, ((0, 1),), points)
    w = None if weight is None else WeightField.from_function(g, weight, eps=0.0)
    return g, assemble_weighted_elliptic(g, CoeffField.matrix(g, np.eye(1)), w)


def linear_solve(points=21):
    # unknowns x_i = (i + 1) h; interior set = all but the two end unknowns
    g, T = lap1d(points)
    x = g.nodes()[:, 0]
    I = np.arange(1, T.n - 1)
    return g, T, solve_fractional_dirichlet(T, 1.0, I, x)


def test_sigma_one_reproduces_linear_data():
    _, _, sol = linear_solve()
    x = sol.points[:, 0]
    assert np.allclose(sol.solution, x, atol=1e-13)
    assert sol.residual < 1e-12


def test_harnack_ratio_three_on_linear_solution():
    # ball {k, .., 3k} in units of h carries u from k h to 3 k h
    _, _, sol = linear_solve()
    k = 2
    balls = BallFamily("euclidean", [2 * k - 1], [k * 0.05], [np.arange(k - 1, 3 * k)])
    rep = harnack_ratio(sol, balls)
    assert rep.max_ratio == pytest.approx(3.0, rel=1e-12)
    assert rep.flagged == []


def test_harnack_flags_zero_infimum():
    _, T = lap1d(11)
    u = np.zeros(T.n)
    u[5] = 1.0
    sol = solve_fractional_dirichlet(T, 1.0, [], u)
    rep = harnack_ratio(sol, BallFamily("euclidean", [5], [0.2], [np.arange(3, 8)]), check_inside=False)
    assert rep.flagged == [0] and rep.max_ratio == 1.0


def test_harnack_rejects_negative_solution():
    _, T = lap1d(11)
    sol = solve_fractional_dirichlet(T, 1.0, [], -np.ones(T.n))
    with pytest.raises(VerifyError):
        harnack_ratio(sol, BallFamily("euclidean", [5], [0.1], [np.arange(4, 7)]), check_inside=False)


def test_periodic_constant_solution():
    g = GridSpec(1, ((0, 1),), 17, "periodic")
    T = assemble_weighted_elliptic(g, CoeffField.matrix(g, np.eye(1)))
    I = np.arange(4, 12)
    sol = solve_fractional_dirichlet(T, 0.5, I, np.ones(T.n))
    assert np.allclose(sol.solution, 1.0, atol=1e-10)
    balls = interior_balls(sol, [0.1])
    assert harnack_ratio(sol, balls).max_ratio == pytest.approx(1.0, abs=1e-9)


def test_half_power_solution_nonnegative():
    g, T = lap1d(33, lambda p: 1 + p[:, 0])
    I = interior_set(g)
    data = np.exp(-((g.nodes()[:, 0] - 0.1) ** 2) / 0.01)
    u = solve_fractional_dirichlet(T, 0.5, I, data).solution
    assert u.min() >= -1e-10 * u.max()


def test_comparison_principle(rng):
    g, T = lap1d(25)
    I = interior_set(g)
    S = fractional_power(T, 0.4)
    g1 = np.abs(rng.standard_normal(T.n))
    g2 = g1 + np.abs(rng.standard_normal(T.n))
    u1 = solve_fractional_dirichlet(T, 0.4, I, g1, S=S).solution
    u2 = solve_fractional_dirichlet(T, 0.4, I, g2, S=S).solution
    assert np.all(u2 - u1 >= -1e-10)


def test_boundary_values_length_checked():
    _, T = lap1d(11)
    with pytest.raises(VerifyError):
        solve_fractional_dirichlet(T, 0.5, [3, 4], np.ones(3))


@settings(max_examples=15)
@given(st.floats(1e-3, 1e3))
def test_harnack_scale_invariance(c):
    g, T = lap1d(25)
    I = interior_set(g)
    sol = solve_fractional_dirichlet(T, 0.5, I, 1 + g.nodes()[:, 0] ** 2)
    balls = interior_balls(sol, [0.05, 0.1])
    a = harnack_ratio(sol, balls).max_ratio
    b = harnack_ratio(sol.scaled(c), balls).max_ratio
    assert b == pytest.approx(a, rel=1e-12)


def test_constant_solution_ratio_one_and_local_boundedness():
    g, T = lap1d(25)
    I = interior_set(g)
    sol = solve_fractional_dirichlet(T, 1.0, I, np.full(T.n, 2.0))
    balls = interior_balls(sol, [0.05])
    assert harnack_ratio(sol, balls).max_ratio == pytest.approx(1.0)
    # max |u| = c and the doubled-ball average of u^2 is c^2, so M = 1/c
    M = local_boundedness_check(sol, balls)
    assert M["M"] == pytest.approx(0.5, rel=1e-10)
    assert local_boundedness_check(sol.scaled(4.0), balls)["M"] == pytest.approx(0.125, rel=1e-10)


def test_holder_linear_and_constant():
    _, _, sol = linear_solve(41)
    fit = holder_fit(sol, [0.5], [0.05, 0.1, 0.15, 0.2])
    assert fit.alpha == pytest.approx(1.0, abs=1e-10)
    _, T = lap1d(41)
    flat = solve_fractional_dirichlet(T, 1.0, np.arange(1, T.n - 1), np.ones(T.n))
    assert not holder_fit(flat, [0.5], [0.05, 0.1, 0.15, 0.2]).applicable
    with pytest.raises(VerifyError):
        holder_fit(sol, [0.5], [0.1, 0.2, 0.3])


def test_boundary_holder_linear_and_half():
    lin = boundary_holder_alpha(parse_spec(DEFAULT_SPECS["boundary-holder"]), 1.0)
    assert lin.alpha == pytest.approx(1.0, abs=0.05)
    half = boundary_holder_alpha(parse_spec(DEFAULT_SPECS["boundary-holder"]), 0.5)
    assert 0.5 <= half.alpha <= 0.8
    assert half.prefactor is not None and math.isfinite(half.prefactor)


def test_boundary_holder_center_must_be_on_boundary():
    _, _, sol = linear_solve()
    with pytest.raises(VerifyError):
        boundary_holder_check(sol, [0.5], [0.05, 0.1, 0.15, 0.2])


# ------------------------------------------------------ nondivergence


def nondiv_identity(points=25, periodic=False):
    g = GridSpec(2, ((0, 1), (0, 1)), points, "periodic" if periodic else "dirichlet-eliminated")
    return g, assemble_nondivergence(g, CoeffField.matrix(g, np.eye(2), "nondiv-A"))


def test_w2p_single_mode_refines():
    r = []
    for n in (17, 33):
        g, T = nondiv_identity(n, periodic=True)
        x = g.nodes()
        u = np.cos(2 * np.pi * x[:, 0]) * np.cos(2 * np.pi * x[:, 1])
        r.append(w2p_ratio(T, u, 2.0))
    assert all(math.isfinite(v) and v > 0.5 for v in r)
    assert abs(r[1] - r[0]) / r[0] < 0.05


def test_w2p_point_mass_finite():
    g, T = nondiv_identity(17)
    u = np.zeros(T.n)
    u[T.n // 2] = 1.0
    assert math.isfinite(w2p_ratio(T, u, 2.0))


def test_w2p_scan_requires_nondivergence():
    _, T = lap1d(11)
    with pytest.raises(VerifyError):
        w2p_global_scan(T)
    g, Tn = nondiv_identity(13)
    scan = w2p_global_scan(Tn, 2.0, samples=4, seed=3)
    assert len(scan["ratios"]) == 4 and scan["C"] == max(scan["ratios"])
    with pytest.raises(VerifyError):
        w2p_global_scan(Tn, 1.0)


def test_c1alpha_refusal_and_constant():
    g, T = nondiv_identity(25)
    I = interior_set(g)
    sol = solve_fractional_dirichlet(T, 0.4, I, np.full(T.n, 3.0))
    assert c1alpha_probe(sol, g, [0.5])["passed"]
    bad = solve_fractional_dirichlet(T, 0.7, I, np.full(T.n, 3.0))
    with pytest.raises(VerifyError):
        c1alpha_probe(bad, g, [0.5], p=2.0)
    # p = 4 admits sigma < 0.8
    assert c1alpha_probe(bad, g, [0.5], p=4.0)["passed"]


def test_smooth_fields_seeded():
    g = GridSpec(2, ((0, 1), (0, 1)), 9)
    assert np.array_equal(smooth_random_fields(g, 2, 5), smooth_random_fields(g, 2, 5))
    assert not np.array_equal(smooth_random_fields(g, 1, 5), smooth_random_fields(g, 1, 6))


# ---------------------------------------------------------------- flag


def test_flag_condition():
    g = GridSpec(2, ((-1, 1), (-1, 1)), 9)
    ones = flag_condition_check(CoeffField.diagonal(g, [1.0, 1.0]), g)
    assert ones["passed"] and all(p["chain"] == [[1], [1, 2]] for p in ones["points"])
    assert flag_condition_check(CoeffField.grushin(g, 1), g)["passed"]
    assert not flag_condition_check(CoeffField.diagonal(g, [1.0, 0.0]), g)["passed"]
    with pytest.raises(VerifyError):
        flag_condition_check(CoeffField.matrix(g, np.eye(2)), g)


# --------------------------------------------------------- determinism


def test_harnack_family_deterministic():
    spec = parse_spec(DEFAULT_SPECS["harnack"])
    a = harnack_family(spec, 0.5, seed=7, members=4)
    b = harnack_family(spec, 0.5, seed=7, members=4)
    c = harnack_family(spec, 0.5, seed=8, members=4)
    assert a == b
    assert a["max_ratio"] != c["max_ratio"]
    assert a["min_u"] >= -1e-10


def test_interior_balls_stay_inside():
    g, T = lap1d(33)
    sol = solve_fractional_dirichlet(T, 0.5, interior_set(g), np.ones(T.n))
    balls = interior_balls(sol, [0.05, 0.1, 0.3])
    mask = sol.interior_mask
    for k in range(len(balls)):
        assert np.all(mask[balls.doubled[k]])
    assert point_balls(sol.points, None, [0.05], container=mask).dropped >= 0
