"""Named verification suites shared by the CLI and the acceptance tests.

Every suite takes a :class:`SuiteContext` and returns a list of
:class:`VerificationReport`.  Each report carries a descriptive anchor naming
the identity or estimate it exercises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import AssembledOperator, assemble_weighted_elliptic, from_matrix
from .calculus import (
    CalculusError,
    dense,
    dirichlet_form_check,
    frac_power_apply_spectral,
    frac_power_apply_balakrishnan,
    frac_power_matrix,
    sectoriality_scan,
    spectrum,
)
from .extension import (
    bump_functions,
    bvp_refinement_nodes,
    derivative_bound_scan,
    extend_poisson,
    extend_subordination,
    frac_norm_scan,
    geometric_y_grid,
    neumann_constant,
    neumann_limits,
    observed_order,
    ode_residual,
    reflect_even,
    solve_extension_bvp,
    truncated_bessel_profile,
    bessel_profile,
    weak_residual,
)
from .grid import CoeffField, GridSpec, WeightField
from .reports import VerificationReport, check_ge, check_le, check_true
from .specio import OperatorSpec, parse_spec
from .structure import metric_balls, point_balls, sector_angle, subunit_distance
from .verify import (
    VerifyError,
    c1alpha_probe,
    boundary_holder_check,
    flag_condition_check,
    harnack_ratio,
    holder_fit,
    lattice_to_unknown,
    local_boundedness_check,
    smooth_random_fields,
    solve_fractional_dirichlet,
    w2p_global_scan,
)

SUITES = (
    "limits",
    "poisson-equivalence",
    "derivative-bounds",
    "harnack",
    "holder",
    "boundary-holder",
    "sectoriality",
    "form-check",
    "subelliptic",
    "nondivergence",
)

DEFAULT_TOL = {
    "limits.scalar": 1e-4,
    "limits.matrix": 1e-3,
    "poisson.routes": 1e-6,
    "poisson.bessel": 1e-6,
    "poisson.bvp_factor": 3.0,
    "ode.order": 1.8,
    "derivative.drift": 0.05,
    "derivative.frac": 1e-6,
    "reflection.factor": 2.0,
    "reflection.floor": 1e-9,
    "harnack.scale": 1e-12,
    "harnack.refine": 0.2,
    "harnack.nonneg": 1e-10,
    "holder.refine": 0.2,
    "holder.linear": 0.05,
    "sector.offset": 0.1,
    "form.angle": 1e-9,
    "nondiv.refine": 0.2,
    "nondiv.p": 2.0,
}

DEFAULT_SIGMA = {
    "limits": 0.5,
    "poisson-equivalence": 0.5,
    "derivative-bounds": 0.5,
    "harnack": 0.5,
    "holder": 0.5,
    "boundary-holder": 0.5,
    "sectoriality": None,
    "form-check": None,
    "subelliptic": 0.5,
    "nondivergence": 0.4,
}

# sigma ranges per suite: (lo, hi, hi inclusive)
SIGMA_RANGE = {
    "limits": (0.0, 1.0, False),
    "poisson-equivalence": (0.0, 1.0, False),
    "derivative-bounds": (0.0, 1.0, False),
    "harnack": (0.0, 1.0, True),
    "holder": (0.0, 1.0, True),
    "boundary-holder": (0.0, 1.0, True),
    "subelliptic": (0.5, 0.5, True),
    "nondivergence": (0.0, 1.0, False),
}


def _laplace1d(points: int = 34) -> dict:
    return {
        "family": "weighted-elliptic",
        "grid": {"dim": 1, "extents": [[0, 1]], "points": points, "boundary": "dirichlet-eliminated"},
        "coefficients": {"type": "identity"},
        "weight": {"type": "constant", "value": 1.0},
    }


DEFAULT_SPECS = {
    "limits": _laplace1d(34),
    "poisson-equivalence": _laplace1d(34),
    "derivative-bounds": _laplace1d(34),
    "harnack": _laplace1d(33),
    "holder": _laplace1d(65),
    "boundary-holder": _laplace1d(65),
    "sectoriality": {
        "family": "weighted-elliptic",
        "grid": {"dim": 2, "extents": [[0, 1], [0, 1]], "points": 12},
        "coefficients": {"type": "constant", "matrix": [[2.0, 0.5], [-0.5, 2.0]]},
    },
    "form-check": {
        "family": "weighted-elliptic",
        "grid": {"dim": 2, "extents": [[0, 1], [0, 1]], "points": 14},
        "coefficients": {"type": "skew-jump", "strength": 10.0},
    },
    "subelliptic": {
        "family": "subelliptic-diagonal",
        "grid": {"dim": 2, "extents": [[-1, 1], [-1, 1]], "points": 17},
        "coefficients": {"type": "grushin", "k": 1},
    },
    "nondivergence": {
        "family": "nondivergence",
        "grid": {"dim": 2, "extents": [[-1, 1], [-1, 1]], "points": 25},
        "coefficients": {"type": "bmo-perturbation", "amplitude": 0.1, "frequency": 2.0},
    },
}


class SuiteError(ValueError):
    """Configuration error detected by a suite (maps to exit code 2)."""


@dataclass
class SuiteContext:
    spec: OperatorSpec
    sigma: Optional[float]
    seed: int = 0
    tol: dict = field(default_factory=lambda: dict(DEFAULT_TOL))
    out_dir: Optional[str] = None

    def t(self, name: str) -> float:
        return float(self.tol.get(name, DEFAULT_TOL[name]))


def refined_spec(spec: OperatorSpec) -> OperatorSpec:
    """Same spec with the mesh width halved."""
    doc = dict(spec.raw)
    doc["grid"] = dict(doc["grid"], points=2 * spec.grid.points_per_axis - 1)
    return parse_spec(doc)


def check_sigma(suite: str, sigma: Optional[float]) -> Optional[float]:
    """Resolve the default and validate the range; raise SuiteError otherwise."""
    if sigma is None:
        return DEFAULT_SIGMA.get(suite)
    if suite not in SIGMA_RANGE:
        return sigma
    lo, hi, incl = SIGMA_RANGE[suite]
    if lo == hi:
        if sigma != lo:
            raise SuiteError(f"suite {suite} runs sigma = {lo} only, got {sigma}")
        return sigma
    ok = lo < sigma < hi or (incl and sigma == hi)
    if not ok:
        rng = f"({lo}, {hi}]" if incl else f"({lo}, {hi})"
        raise SuiteError(f"sigma={sigma} outside {rng} for suite {suite}")
    return sigma


def rel(a, b, T: Optional[AssembledOperator] = None) -> float:
    nrm = (lambda v: T.wnorm(v)) if T is not None else (lambda v: float(np.linalg.norm(v)))
    return float(nrm(np.asarray(a) - np.asarray(b)) / max(nrm(b), 1e-300))


def oracle_power(T: AssembledOperator, sigma: float, v) -> np.ndarray:
    """Spectral ``T^s v``, or the Balakrishnan route when the spectral one refuses."""
    try:
        return frac_power_apply_spectral(T, sigma, v)
    except CalculusError:
        return frac_power_apply_balakrishnan(T, sigma, v)


def sample_state(T: AssembledOperator, seed: int) -> np.ndarray:
    if T.grid is not None:
        return smooth_random_fields(T.grid, 1, seed)[0]
    return np.random.default_rng(seed).standard_normal(T.n)


# ------------------------------------------------------------- extension


def suite_limits(ctx: SuiteContext) -> list:
    s = ctx.sigma
    out = []
    one = from_matrix([[1.0]])
    prof = extend_poisson(one, s, [1.0])
    rep = neumann_limits(prof, [1.0])
    target = neumann_constant(s)
    tol = ctx.t("limits.scalar")
    anchor = "Dirichlet-to-Neumann limits (quotient/flux/second derivative) for T = 1"
    out.append(check_le("scalar quotient limit", abs(rep.estimate_quotient[0] - target), tol, anchor,
                        [{"target": target, "estimate": float(rep.estimate_quotient[0])}]))
    out.append(check_le("scalar flux limit", abs(rep.estimate_flux[0] - target), tol, anchor,
                        [{"target": target, "estimate": float(rep.estimate_flux[0])}]))
    out.append(check_le("scalar second-derivative limit", abs(rep.estimate_second[0] - (2 * s - 1) * target), tol,
                        anchor, [{"target": (2 * s - 1) * target, "estimate": float(rep.estimate_second[0])}]))
    T = ctx.spec.assemble()
    x0 = sample_state(T, ctx.seed)
    oracle = oracle_power(T, s, x0)
    prof = extend_poisson(T, s, x0)
    rep = neumann_limits(prof, oracle)
    err = rep.errors(T)
    tol = ctx.t("limits.matrix")
    anchor = "Dirichlet-to-Neumann limits against Gamma(-s)/(4^s Gamma(s)) T^s x0"
    tr = [{"richardson_orders": list(rep.richardson_orders), "spread": rep.spread, "constant": neumann_constant(s)}]
    out.append(check_le("matrix quotient limit (relative)", err["quotient"], tol, anchor, tr))
    out.append(check_le("matrix flux limit (relative)", err["flux"], tol, anchor, tr))
    out.append(check_le("matrix second-derivative limit (relative)", err["second"], tol, anchor, tr))
    return out


def bvp_modal_errors(T_grid: GridSpec, A: CoeffField, w: Optional[WeightField], sigma: float, levels: int = 3):
    """Modal error of the extension BVP against the truncated Bessel solution, per refinement level."""
    T = assemble_weighted_elliptic(T_grid, A, w)
    d = np.sqrt(T.inner_weight)
    H = T.stiffness().toarray() / d[:, None] / d[None, :]
    lam, V = np.linalg.eigh(0.5 * (H + H.T))
    phi = V[:, 0] / d
    phi /= T.wnorm(phi)
    errs = []
    for L in range(levels):
        y = bvp_refinement_nodes(T, sigma, L)
        F = solve_extension_bvp(T_grid, A, w, sigma, phi, y_nodes=y)
        c = (T.inner_weight * phi) @ F.U
        ex = truncated_bessel_profile(lam[0], sigma, F.y, F.y[-1])
        errs.append(float(np.abs(c - ex).max()))
    return errs


def suite_poisson(ctx: SuiteContext) -> list:
    s = ctx.sigma
    T = ctx.spec.assemble()
    x0 = sample_state(T, ctx.seed)
    y = geometric_y_grid(T)
    P = extend_poisson(T, s, x0, y, derivatives=False)
    Sb = extend_subordination(T, s, x0, y)
    x0n = T.wnorm(x0)
    diff = max(T.wnorm(a - b) for a, b in zip(P.states, Sb.states)) / x0n
    out = [check_le("Poisson vs subordination profiles", diff, ctx.t("poisson.routes"),
                    "Poisson formula vs defining extension formula", [{"y_nodes": len(y)}])]
    spec = spectrum(T)
    if T.symmetric and not spec.defective:
        k = int(np.argmin(spec.values.real))
        lam = float(spec.values[k].real)
        phi = spec.vectors[:, k].real
        phi = phi / T.wnorm(phi)
        prof = extend_poisson(T, s, phi, y, derivatives=False)
        ex = bessel_profile(lam, s, y)
        err = max(T.wnorm(st - e * phi) for st, e in zip(prof.states[1:], ex))
        out.append(check_le("modal profile vs Bessel closed form", err, ctx.t("poisson.bessel"),
                            "Bessel-K closed form of the extension", [{"lambda": lam}]))
    if ctx.spec.family == "weighted-elliptic":
        errs = bvp_modal_errors(ctx.spec.grid, ctx.spec.coefficients, ctx.spec.weight, s)
        factors = [a / b for a, b in zip(errs[:-1], errs[1:])]
        out.append(check_ge("extension BVP error reduction per refinement", min(factors), ctx.t("poisson.bvp_factor"),
                            "weighted extension problem vs Bessel closed form", [{"errors": errs, "factors": factors}]))
        out.append(reflection_check(ctx))
    return out


def reflection_decay(values, floor: float) -> Optional[float]:
    """Smallest per-level reduction factor over steps whose finer value is above ``floor``.

    ``None`` when every step ends at or below the round-off floor.
    """
    f = [a / b for a, b in zip(values[:-1], values[1:]) if b > floor]
    return float(min(f)) if f else None


def reflection_check(ctx: SuiteContext) -> VerificationReport:
    grid = ctx.spec.grid
    I = interior_set(grid)
    pts = grid.nodes()
    g = bump_data(pts, grid.extents, ctx.seed)
    g[I] = 0.0
    lo = np.array([e[0] for e in grid.extents])
    hi = np.array([e[1] for e in grid.extents])
    mid = 0.5 * (lo + hi)
    L = float(np.max(hi - lo))
    centers = [mid + d * L * np.eye(grid.dim)[0] for d in (-0.05, 0.0, 0.05)]
    vals = reflection_residuals(grid, ctx.spec.coefficients, ctx.spec.weight, ctx.sigma, I, g, centers, 0.1 * L)
    floor = ctx.t("reflection.floor")
    factor = reflection_decay(vals, floor)
    name = "even-reflection weak residual reduction per refinement"
    anchor = "even reflection is a weak solution where T^s u = 0"
    trace = [{"relative_residuals": vals, "floor": floor}]
    if factor is None:
        return VerificationReport(name, "below-floor", ctx.t("reflection.factor"), True, trace, anchor, ">=")
    return check_ge(name, factor, ctx.t("reflection.factor"), anchor, trace)


def ode_order_check(T: AssembledOperator, sigma: float, x0, ratio: float = 1.25) -> tuple:
    y1 = geometric_y_grid(T, ratio=ratio)
    y2 = geometric_y_grid(T, ratio=math.sqrt(ratio))
    r1 = ode_residual(extend_poisson(T, sigma, x0, y1, derivatives=False))
    r2 = ode_residual(extend_poisson(T, sigma, x0, y2, derivatives=False))
    order = observed_order(r1, r2, math.log(ratio), 0.5 * math.log(ratio))
    return order, float(np.median(r1.relative)), float(np.median(r2.relative))


def suite_derivative_bounds(ctx: SuiteContext) -> list:
    s = ctx.sigma
    T = ctx.spec.assemble()
    x0 = sample_state(T, ctx.seed)
    out = []
    order, c, f = ode_order_check(T, s, x0)
    out.append(check_ge("extension ODE residual order", order, ctx.t("ode.order"),
                        "extension ODE -Tx + ((1-2s)/y)x' + x'' = 0",
                        [{"median_relative_coarse": c, "median_relative_fine": f}]))
    p1 = extend_poisson(T, s, x0, geometric_y_grid(T, ratio=1.25))
    p2 = extend_poisson(T, s, x0, geometric_y_grid(T, ratio=math.sqrt(1.25)))
    b1, b2 = derivative_bound_scan(p1), derivative_bound_scan(p2)
    for n in (0, 1, 2):
        drift = abs(b2[n] - b1[n]) / max(b1[n], 1e-300)
        out.append(check_le(f"sup y^{n} |x^({n})| / |x0| drift", drift, ctx.t("derivative.drift"),
                            "derivative bounds y^n |x^(n)(y)| <= C |x0|",
                            [{"coarse": b1[n], "fine": b2[n]}]))
    if spectrum(T).normal:
        C = frac_norm_scan(p1)
        val = 1.0 if C is None else C
        out.append(check_le("sup |T^s x(y)| / |T^s x0|", val - 1.0, ctx.t("derivative.frac"),
                            "fractional-norm bound on the extension (normal operators)", [{"C": C}]))
    else:
        out.append(VerificationReport("sup |T^s x(y)| / |T^s x0|", None, None, True,
                                      [{"note": "operator not normal in the weighted inner product"}],
                                      "fractional-norm bound on the extension (normal operators)", "n/a"))
    return out


def reflection_residuals(grid: GridSpec, A: CoeffField, w, sigma: float, interior, boundary_values,
                         bump_centers, bump_radius: float, levels: int = 3):
    """Weak residual of the even reflection, tested on bumps inside the annihilated set.

    Returned values are relative to the residual of a bump placed on the
    data support (which does not vanish).
    """
    T = assemble_weighted_elliptic(grid, A, w)
    u = solve_fractional_dirichlet(T, sigma, interior, boundary_values).solution
    pts = grid.nodes()
    b = bump_functions(grid, bump_centers, bump_radius)
    lo = np.flatnonzero(~np.isin(np.arange(T.n), interior))
    ref_center = pts[lo[np.argmax(np.abs(u[lo]))]]
    bo = bump_functions(grid, [ref_center], bump_radius)
    vals, scale = [], []
    for L in range(levels):
        F = solve_extension_bvp(grid, A, w, sigma, u, y_nodes=bvp_refinement_nodes(T, sigma, L))
        R = reflect_even(F)
        vals.append(float(np.abs(weak_residual(R, b)).max()))
        scale.append(float(np.abs(weak_residual(R, bo)).max()))
    return [v / max(sc, 1e-300) for v, sc in zip(vals, scale)]


# ----------------------------------------------------------------- verify


def interior_set(grid: GridSpec, frac: float = 0.2) -> np.ndarray:
    """Unknowns strictly inside the middle ``1 - 2 frac`` of every extent."""
    pts = grid.nodes()
    m = np.ones(len(pts), dtype=bool)
    for a, (lo, hi) in enumerate(grid.extents):
        L = hi - lo
        m &= (pts[:, a] > lo + frac * L + 1e-12) & (pts[:, a] < hi - frac * L - 1e-12)
    return np.flatnonzero(m)


def bump_data(pts: np.ndarray, extents, seed: int, count: int = 3) -> np.ndarray:
    """Nonnegative sum of Gaussian bumps; depends only on coordinates (grid independent)."""
    rng = np.random.default_rng(seed)
    lo = np.array([e[0] for e in extents])
    hi = np.array([e[1] for e in extents])
    width = 0.15 * float(np.max(hi - lo))
    g = np.zeros(len(pts))
    for _ in range(count):
        c = rng.uniform(lo, hi)
        a = rng.uniform(0.1, 1.0)
        g += a * np.exp(-np.sum((pts - c) ** 2, axis=1) / (2 * width**2))
    return g


def _ball_layout(grid: GridSpec, metric: str):
    lo = np.array([e[0] for e in grid.extents])
    hi = np.array([e[1] for e in grid.extents])
    mid = 0.5 * (lo + hi)
    L = float(np.max(hi - lo))
    if metric == "subunit":
        off, radii = 0.125 * L, [0.075 * L, 0.125 * L]
    else:
        off, radii = 0.04 * L, [0.05 * L, 0.1 * L]
    centers = [mid]
    for a in range(grid.dim):
        for sgn in (-1, 1):
            c = mid.copy()
            c[a] += sgn * off
            centers.append(c)
    return centers, radii


def harnack_family(spec: OperatorSpec, sigma: float, seed: int, members: int = 20, metric: Optional[str] = None):
    """Max Harnack ratio over a seeded nonnegative ensemble; returns (max, scaled max, min u, balls)."""
    T = spec.assemble()
    grid = spec.grid
    metric = metric or ("subunit" if spec.family == "subelliptic-diagonal" else "euclidean")
    I = interior_set(grid)
    S = frac_power_matrix(T, sigma)
    pts = grid.nodes()
    centers, radii = _ball_layout(grid, metric)
    inside = np.zeros(T.n, dtype=bool)
    inside[I] = True
    if metric == "subunit":
        cont = np.zeros(grid.lattice_size, dtype=bool)
        cont[grid.unknown_index()[I]] = True
        balls = lattice_to_unknown(metric_balls(spec.coefficients, centers, radii, grid, container=cont), grid)
    else:
        cidx = [int(np.argmin(np.linalg.norm(pts - c, axis=1))) for c in centers]
        balls = point_balls(pts, cidx, radii, metric, container=inside)
    if len(balls) == 0:
        raise SuiteError("no ball with its double inside the interior set; refine the grid")
    best = best10 = 1.0
    umin = math.inf
    lb = 0.0
    for k in range(members):
        g = bump_data(pts, grid.extents, int(np.random.SeedSequence([seed, k]).generate_state(1)[0]))
        sol = solve_fractional_dirichlet(T, sigma, I, g, S=S)
        umin = min(umin, float(sol.solution.min() / max(sol.solution.max(), 1e-300)))
        rep = harnack_ratio(sol, balls)
        rep10 = harnack_ratio(sol.scaled(10.0), balls)
        best = max(best, rep.max_ratio)
        best10 = max(best10, rep10.max_ratio)
        lb = max(lb, local_boundedness_check(sol, balls, T.inner_weight)["M"])
    return {"max_ratio": best, "max_ratio_scaled": best10, "min_u": umin, "balls": len(balls),
            "dropped": balls.dropped, "local_boundedness_M": lb}


def harnack_checks(spec: OperatorSpec, sigma: float, seed: int, ctx: SuiteContext, anchor: str) -> list:
    coarse = harnack_family(spec, sigma, seed)
    fine = harnack_family(refined_spec(spec), sigma, seed)
    trace = [dict(coarse, points=spec.grid.points_per_axis),
             dict(fine, points=2 * spec.grid.points_per_axis - 1)]
    out = []
    out.append(check_ge("ensemble solutions nonnegative (min u / max u)",
                        min(coarse["min_u"], fine["min_u"]), -ctx.t("harnack.nonneg"), anchor, trace))
    out.append(check_true("max sup/inf ratio finite", math.isfinite(coarse["max_ratio"]) and math.isfinite(fine["max_ratio"]),
                          anchor, trace, measured=coarse["max_ratio"]))
    sc = abs(coarse["max_ratio_scaled"] - coarse["max_ratio"]) / coarse["max_ratio"]
    out.append(check_le("ratio invariance under u -> 10u", sc, ctx.t("harnack.scale"), anchor))
    drift = abs(fine["max_ratio"] - coarse["max_ratio"]) / coarse["max_ratio"]
    out.append(check_le("max ratio drift under refinement", drift, ctx.t("harnack.refine"), anchor, trace))
    return out


def suite_harnack(ctx: SuiteContext) -> list:
    if ctx.spec.family == "subelliptic-diagonal" and ctx.sigma != 0.5:
        raise SuiteError("subelliptic Harnack scans run sigma = 1/2 only")
    anchor = ("Harnack inequality sup_B u <= M inf_B u on subunit balls"
              if ctx.spec.family == "subelliptic-diagonal"
              else "Harnack inequality sup_B u <= M inf_B u on Euclidean balls")
    return harnack_checks(ctx.spec, ctx.sigma, ctx.seed, ctx, anchor)


def holder_radii(grid: GridSpec) -> np.ndarray:
    L = max(hi - lo for lo, hi in grid.extents)
    return L * np.array([1 / 32, 1 / 16, 1 / 8, 1 / 4])


def step_data(pts: np.ndarray, split: float) -> np.ndarray:
    return (pts[:, 0] > split).astype(float)


def interior_holder_alpha(spec: OperatorSpec, sigma: float, data: Callable) -> tuple:
    T = spec.assemble()
    grid = spec.grid
    I = interior_set(grid)
    pts = grid.nodes()
    mid = np.array([0.5 * (lo + hi) for lo, hi in grid.extents])
    sol = solve_fractional_dirichlet(T, sigma, I, data(pts))
    fit = holder_fit(sol, mid, holder_radii(grid))
    return fit


def suite_holder(ctx: SuiteContext) -> list:
    s = ctx.sigma
    grid = ctx.spec.grid
    mid = np.array([0.5 * (lo + hi) for lo, hi in grid.extents])
    data = lambda p: step_data(p, mid[0])
    anchor = "interior Hoelder continuity osc_B(rho) u <= C rho^alpha"
    f1 = interior_holder_alpha(ctx.spec, s, data)
    f2 = interior_holder_alpha(refined_spec(ctx.spec), s, data)
    out = []
    if not (f1.applicable and f2.applicable):
        raise SuiteError("Hoelder fit not applicable (constant solution)")
    tr = [f1.to_dict(), f2.to_dict()]
    out.append(check_ge("interior alpha positive", min(f1.alpha, f2.alpha), 1e-12, anchor, tr))
    out.append(check_le("interior alpha drift under refinement", abs(f2.alpha - f1.alpha) / f1.alpha,
                        ctx.t("holder.refine"), anchor, tr))
    # sigma = 1 sanity case: linear boundary data on the unweighted Laplacian
    plain = parse_spec({"family": "weighted-elliptic", "grid": ctx.spec.raw["grid"],
                        "coefficients": {"type": "identity"}})
    lin = interior_holder_alpha(plain, 1.0, lambda p: p[:, 0] - grid.extents[0][0])
    out.append(check_le("sigma = 1 linear data recovers alpha = 1", abs(lin.alpha - 1.0), ctx.t("holder.linear"),
                        anchor, [lin.to_dict()]))
    return out


def boundary_holder_alpha(spec: OperatorSpec, sigma: float, width: float = 0.25):
    """Half-grid geometry: interior set to the right of the mid hyperplane, zero data to its left."""
    T = spec.assemble()
    grid = spec.grid
    pts = grid.nodes()
    lo0, hi0 = grid.extents[0]
    L = hi0 - lo0
    x0 = 0.5 * (lo0 + hi0)
    m = (pts[:, 0] > x0 + 1e-12) & (pts[:, 0] < x0 + width * L - 1e-12)
    for a in range(1, grid.dim):
        lo, hi = grid.extents[a]
        m &= (pts[:, a] > lo + 0.2 * (hi - lo)) & (pts[:, a] < hi - 0.2 * (hi - lo))
    I = np.flatnonzero(m)
    g = np.maximum(pts[:, 0] - x0, 0.0)
    sol = solve_fractional_dirichlet(T, sigma, I, g)
    center = np.array([x0] + [0.5 * (lo + hi) for lo, hi in grid.extents[1:]])
    radii = L * np.array([1 / 64, 1 / 32, 1 / 16, 1 / 8])
    return boundary_holder_check(sol, center, radii, T.inner_weight)


def suite_boundary_holder(ctx: SuiteContext) -> list:
    anchor = "boundary Hoelder decay near a flat boundary portion (half-grid)"
    f1 = boundary_holder_alpha(ctx.spec, ctx.sigma)
    f2 = boundary_holder_alpha(refined_spec(ctx.spec), ctx.sigma)
    tr = [f1.to_dict(), f2.to_dict()]
    out = [
        check_ge("boundary alpha positive", min(f1.alpha, f2.alpha), 1e-12, anchor, tr),
        check_true("boundary prefactor finite", f1.prefactor is not None and math.isfinite(f1.prefactor), anchor, tr,
                   measured=f1.prefactor),
        check_le("boundary alpha drift under refinement", abs(f2.alpha - f1.alpha) / f1.alpha,
                 ctx.t("holder.refine"), anchor, tr),
    ]
    plain = parse_spec({"family": "weighted-elliptic", "grid": ctx.spec.raw["grid"],
                        "coefficients": {"type": "identity"}})
    lin = boundary_holder_alpha(plain, 1.0)
    out.append(check_le("sigma = 1 boundary alpha = 1", abs(lin.alpha - 1.0), ctx.t("holder.linear"), anchor,
                        [lin.to_dict()]))
    return out


# -------------------------------------------------------------- calculus


def scan_angle(T: AssembledOperator, offset: float) -> float:
    """``sector_angle(lambda, Lambda) + offset``, or the hint plus offset without ellipticity bounds."""
    base = T.sector_angle_hint
    if T.lam is not None and T.Lam is not None and T.lam > 0:
        base = max(base, sector_angle(T.lam, T.Lam))
    return min(base + offset, math.pi)


def suite_sectoriality(ctx: SuiteContext) -> list:
    T = ctx.spec.assemble()
    theta = scan_angle(T, ctx.t("sector.offset"))
    rep = sectoriality_scan(T, theta)
    anchor = "sectoriality |z| |(z - T)^-1| <= c_theta outside the sector"
    lam = spectrum(T).values
    arg = float(np.max(np.abs(np.angle(lam[np.abs(lam) > 1e-12 * np.abs(lam).max()]))))
    return [
        check_true("resolvent samples finite", rep.passed, anchor, [rep.to_dict()], measured=rep.c_theta),
        check_le("spectrum inside the scanned sector (max |arg lambda|)", arg, theta, anchor),
    ]


def numerical_range_angle(T: AssembledOperator, samples: int, seed: int) -> float:
    """Largest ``|arg E(u, conj u)|`` over random complex vectors."""
    S = T.inner_weight[:, None] * dense(T)
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((T.n, samples)) + 1j * rng.standard_normal((T.n, samples))
    E = np.einsum("ij,ij->j", U.conj(), S @ U)
    return float(np.max(np.abs(np.angle(E))))


def suite_form_check(ctx: SuiteContext) -> list:
    T = ctx.spec.assemble()
    rep = dirichlet_form_check(T, 10_000, ctx.seed)
    anchor = "Dirichlet form lower bound and sector condition; semigroup angle pi/2 - arctan(1/K)"
    tol = ctx.t("form.angle")
    spec_arg = float(np.max(np.abs(np.angle(spectrum(T).values))))
    nr = numerical_range_angle(T, 2000, ctx.seed)
    theta = max(rep.angle, T.sector_angle_hint) + ctx.t("sector.offset")
    scan = sectoriality_scan(T, min(theta, math.pi))
    return [
        check_le("alpha0 (lower-bound shift)", rep.alpha0, 0.0, anchor, [rep.to_dict()]),
        check_ge("min sampled E(u,u)/|u|^2", rep.min_energy, 0.0, anchor),
        check_true("K finite", math.isfinite(rep.K), anchor, measured=rep.K),
        check_le("spectrum within the angle arctan(K)", spec_arg - rep.angle, tol, anchor,
                 [{"max_arg": spec_arg, "angle": rep.angle}]),
        check_le("numerical range within the angle arctan(K)", nr - rep.angle, tol, anchor,
                 [{"max_arg": nr, "angle": rep.angle}]),
        check_true("resolvent bounded just outside the form angle", scan.passed, anchor, [scan.to_dict()],
                   measured=scan.c_theta),
    ]


# ------------------------------------------------------------ subelliptic


def suite_subelliptic(ctx: SuiteContext) -> list:
    if ctx.spec.family != "subelliptic-diagonal":
        raise SuiteError("suite subelliptic needs a subelliptic-diagonal spec")
    a = ctx.spec.coefficients
    grid = ctx.spec.grid
    out = []
    flag = flag_condition_check(a, grid)
    out.append(check_true("flag condition at every node", flag["passed"], "flag condition (nested index chains)",
                          [{"failed": [p["node"] for p in flag["points"] if not p["passed"]]}]))
    lo = np.array([e[0] for e in grid.extents])
    hi = np.array([e[1] for e in grid.extents])
    p, q = 0.5 * (lo + hi), 0.5 * (lo + hi) + 0.25 * (hi - lo)
    d1 = subunit_distance(a, p, q, grid)
    d2 = subunit_distance(a.scaled(2.0), p, q, grid)
    out.append(check_le("subunit distance scaling a -> 2a", abs(d2 - 0.5 * d1) / d1, 1e-12,
                        "subunit metric of the quadratic form", [{"d": d1, "d_scaled": d2}]))
    out.extend(harnack_checks(ctx.spec, 0.5, ctx.seed, ctx,
                              "square-root Harnack inequality on subunit metric balls"))
    return out


# ---------------------------------------------------------- nondivergence


def c1alpha_run(spec: OperatorSpec, sigma: float, p: float, alphas) -> dict:
    T = spec.assemble()
    grid = spec.grid
    I = interior_set(grid)
    pts = grid.nodes()
    g = 1.0 + pts[:, 0] ** 2 + np.sin(2 * pts[:, -1])
    sol = solve_fractional_dirichlet(T, sigma, I, g)
    return c1alpha_probe(sol, grid, alphas, p)


def suite_nondivergence(ctx: SuiteContext) -> list:
    if ctx.spec.family != "nondivergence":
        raise SuiteError("suite nondivergence needs a nondivergence spec")
    p = ctx.t("nondiv.p")
    lim = p / (p + 1)
    if not ctx.sigma < lim:
        raise SuiteError(f"sigma={ctx.sigma} outside 0 < sigma < p/(p+1) = {lim:.6g}")
    out = []
    anchor = "global W^{2,p} estimate |u|_{W2p} <= C (|u|_p + |L u|_p)"
    T1 = ctx.spec.assemble()
    T2 = refined_spec(ctx.spec).assemble()
    c1 = w2p_global_scan(T1, p, 8, ctx.seed)
    c2 = w2p_global_scan(T2, p, 8, ctx.seed)
    out.append(check_true("W2p constant finite", math.isfinite(c1["C"]) and math.isfinite(c2["C"]), anchor,
                          [c1, c2], measured=c1["C"]))
    out.append(check_le("W2p constant drift under refinement", abs(c2["C"] - c1["C"]) / c1["C"],
                        ctx.t("nondiv.refine"), anchor))
    anchor = "C^{1,alpha} regularity for 0 < sigma < p/(p+1)"
    alphas = [0.25, 0.5, 0.75]
    res = c1alpha_run(ctx.spec, ctx.sigma, p, alphas)
    out.append(check_true("gradient oscillation decay", res["passed"], anchor, [res], measured=res["beta"]))
    refused = False
    try:
        c1alpha_run(ctx.spec, min(lim + 0.01, 0.99), p, alphas)
    except VerifyError:
        refused = True
    out.append(check_true("refusal for sigma >= p/(p+1)", refused, anchor))
    return out


RUNNERS = {
    "limits": suite_limits,
    "poisson-equivalence": suite_poisson,
    "derivative-bounds": suite_derivative_bounds,
    "harnack": suite_harnack,
    "holder": suite_holder,
    "boundary-holder": suite_boundary_holder,
    "sectoriality": suite_sectoriality,
    "form-check": suite_form_check,
    "subelliptic": suite_subelliptic,
    "nondivergence": suite_nondivergence,
}


def run_suite(name: str, spec: Optional[OperatorSpec] = None, sigma: Optional[float] = None, seed: int = 0,
              tol: Optional[dict] = None, out_dir: Optional[str] = None) -> list:
    if name not in RUNNERS:
        raise SuiteError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    sigma = check_sigma(name, sigma)
    spec = spec or parse_spec(DEFAULT_SPECS[name])
    tols = dict(DEFAULT_TOL)
    tols.update(tol or {})
    return RUNNERS[name](SuiteContext(spec, sigma, seed, tols, out_dir))
