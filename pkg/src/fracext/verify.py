"""Empirical checks of a priori estimates for fractional powers.

The fractional Dirichlet problem ``(T^s u) = 0`` on an index set is solved on
the full matrix power: with ``S = T^s``, interior values satisfy
``S_II u_I = -S_IB u_B``.  Harnack ratios, local boundedness constants and
Hoelder exponents are then read off the discrete solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .assembly import AssembledOperator
from .calculus import QuadratureScheme, as_operator, dense, frac_power_matrix
from .grid import CoeffField, GridSpec, WeightField
from .structure import BallFamily, point_balls

DENSE_S_CAP = 2048


class VerifyError(RuntimeError):
    """Raised when a verification precondition fails."""


@dataclass
class FractionalSolve:
    sigma: float
    interior_index_set: np.ndarray
    boundary_values: np.ndarray
    solution: np.ndarray
    residual: float
    points: Optional[np.ndarray] = field(default=None, repr=False)
    weights: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros(len(self.solution), dtype=bool)
        m[self.interior_index_set] = True
        return m

    def scaled(self, c: float) -> "FractionalSolve":
        return FractionalSolve(
            self.sigma, self.interior_index_set, c * self.boundary_values, c * self.solution,
            abs(c) * self.residual, self.points, self.weights,
        )


def fractional_power(T, sigma: float, route: str = "auto", q: Optional[QuadratureScheme] = None) -> np.ndarray:
    """Dense ``T^sigma`` (``T`` itself for ``sigma = 1``)."""
    T = as_operator(T)
    if not 0 < sigma <= 1:
        raise VerifyError(f"sigma must lie in (0, 1], got {sigma}")
    if T.n > DENSE_S_CAP:
        raise VerifyError(f"dense fractional power capped at N={DENSE_S_CAP}")
    return frac_power_matrix(T, sigma, route, q)


def solve_fractional_dirichlet(
    T,
    sigma: float,
    interior_idx,
    boundary_values,
    S: Optional[np.ndarray] = None,
    route: str = "auto",
) -> FractionalSolve:
    """Solve ``(T^s u)_i = 0`` for ``i`` in the interior set, ``u = boundary_values`` elsewhere.

    ``boundary_values`` holds one value per complement node (in increasing
    index order) or a full-length vector whose interior entries are ignored.
    ``S`` may carry a precomputed ``T^s``; several right-hand sides are
    accepted as columns.
    """
    T = as_operator(T)
    n = T.n
    I = np.unique(np.asarray(interior_idx, dtype=int))
    mask = np.zeros(n, dtype=bool)
    mask[I] = True
    B = np.flatnonzero(~mask)
    ub = np.asarray(boundary_values, dtype=float)
    if ub.shape[0] == n:
        ub = ub[B]
    if ub.shape[0] != len(B):
        raise VerifyError(f"need {len(B)} boundary values, got {ub.shape[0]}")
    S = fractional_power(T, sigma, route) if S is None else S
    pts = T.grid.nodes() if T.grid is not None else np.arange(n, dtype=float)[:, None]
    if len(I) == 0:
        return FractionalSolve(sigma, I, ub, ub.copy(), 0.0, pts, T.inner_weight)
    SII = S[np.ix_(I, I)]
    SIB = S[np.ix_(I, B)]
    lu = sla.lu_factor(SII)
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= 1e-13 * piv.max():
        raise VerifyError("interior block of T^s is singular to working precision")
    uI = sla.lu_solve(lu, -(SIB @ ub))
    u = np.zeros((n,) + ub.shape[1:])
    u[I] = uI
    u[B] = ub
    res = float(np.abs(S[I] @ u).max())
    return FractionalSolve(sigma, I, ub, u, res, pts, T.inner_weight)


# -------------------------------------------------------------- Harnack


@dataclass
class HarnackReport:
    balls: BallFamily = field(repr=False)
    per_ball: list
    max_ratio: float
    flagged: list
    refinement_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "balls": len(self.balls),
            "metric": self.balls.metric,
            "max_ratio": self.max_ratio,
            "flagged": len(self.flagged),
            "refinement_trace": self.refinement_trace,
        }


def _nonneg(u: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    scale = max(np.abs(u).max(), 1e-300)
    if u.min() < -tol * scale:
        raise VerifyError(f"Harnack scans need u >= 0 (min {u.min():.3g})")
    return np.maximum(u, 0.0)


def harnack_ratio(solve: FractionalSolve, balls: BallFamily, check_inside: bool = True) -> HarnackReport:
    """Per-ball ``sup/inf`` of the solution; balls with ``inf = 0`` are flagged, not maximized."""
    u = _nonneg(np.asarray(solve.solution, float))
    inside = solve.interior_mask
    per, flagged = [], []
    best = 1.0
    for k, (c, r, m) in enumerate(balls):
        if check_inside and balls.doubled is not None and not np.all(inside[balls.doubled[k]]):
            raise VerifyError(f"doubled ball at node {c}, r={r} leaves the interior set")
        hi, lo = float(u[m].max()), float(u[m].min())
        ratio = hi / lo if lo > 0 else math.inf
        per.append((int(c), float(r), hi, lo, ratio))
        if lo > 0:
            best = max(best, ratio)
        else:
            flagged.append(k)
    return HarnackReport(balls, per, best, flagged)


def interior_balls(solve: FractionalSolve, radii: Sequence[float], centers=None, metric: str = "euclidean") -> BallFamily:
    """Balls over the solution nodes whose doubles stay inside the interior set."""
    pts = solve.points
    if centers is None:
        cidx = solve.interior_index_set
    else:
        cidx = [int(np.argmin(np.linalg.norm(pts - np.atleast_1d(c), axis=1))) for c in centers]
    return point_balls(pts, cidx, radii, metric, container=solve.interior_mask)


def lattice_to_unknown(balls: BallFamily, grid: GridSpec) -> BallFamily:
    """Re-index a lattice ball family (e.g. subunit balls) onto the unknowns."""
    pos = np.full(grid.lattice_size, -1, dtype=int)
    idx = grid.unknown_index()
    pos[idx] = np.arange(len(idx))

    def conv(m):
        out = pos[np.asarray(m, dtype=int)]
        if np.any(out < 0):
            raise VerifyError("ball reaches eliminated boundary nodes")
        return out

    members = [conv(m) for m in balls.members]
    doubled = None if balls.doubled is None else [conv(m) for m in balls.doubled]
    return BallFamily(balls.metric, conv(balls.centers), balls.radii, members, balls.dropped, doubled)


def local_boundedness_check(solve: FractionalSolve, balls: BallFamily, w: Optional[np.ndarray] = None) -> dict:
    """Empirical ``M`` in ``max_{B_r} |u| <= M (1/w(B_2r)) int_{B_2r} u^2 dw``.

    The right side is quadratic in ``u`` and the left linear, so the constant
    scales like ``1/|u|``; the scan reports it as a diagnostic.
    """
    if balls.doubled is None:
        raise VerifyError("ball family lacks doubled balls")
    u = np.asarray(solve.solution, float)
    w = np.ones(len(u)) if w is None else np.asarray(w, float)
    Ms = []
    for k, (c, r, m) in enumerate(balls):
        big = balls.doubled[k]
        if not np.all(solve.interior_mask[big]):
            raise VerifyError(f"doubled ball at node {c} leaves the interior set")
        avg = float(np.sum(u[big] ** 2 * w[big]) / np.sum(w[big]))
        lhs = float(np.abs(u[m]).max())
        Ms.append(lhs / avg if avg > 0 else (0.0 if lhs == 0 else math.inf))
    return {"M": float(max(Ms)), "per_ball": Ms, "scale_dependent": True}


# ---------------------------------------------------------------- Hoelder


@dataclass
class HolderFit:
    center: np.ndarray
    radii: np.ndarray
    oscillations: np.ndarray
    alpha: Optional[float]
    residual: Optional[float]
    prefactor: Optional[float] = None
    trimmed: bool = False
    applicable: bool = True

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "residual": self.residual,
            "prefactor": self.prefactor,
            "trimmed": self.trimmed,
            "applicable": self.applicable,
            "radii": self.radii.tolist(),
            "oscillations": self.oscillations.tolist(),
        }


def _fit_loglog(radii: np.ndarray, osc: np.ndarray, trim_tol: float = 0.1):
    def fit(r, o):
        X = np.column_stack([np.ones(len(r)), np.log(r)])
        coef, *_ = np.linalg.lstsq(X, np.log(o), rcond=None)
        res = float(np.sqrt(np.mean((X @ coef - np.log(o)) ** 2)))
        return coef, res

    order = np.argsort(radii)
    r, o = radii[order], osc[order]
    coef, res = fit(r, o)
    trimmed = False
    if res > trim_tol and len(r) >= 6:
        coef, res = fit(r[:-2], o[:-2])
        trimmed = True
    return float(coef[1]), float(math.exp(coef[0])), res, trimmed


def _oscillations(u: np.ndarray, pts: np.ndarray, center, radii, subset=None) -> np.ndarray:
    d = np.linalg.norm(pts - np.atleast_1d(center), axis=1)
    out = []
    for r in radii:
        m = d <= r * (1 + 1e-12)
        if subset is not None:
            m &= subset
        if not np.any(m):
            raise VerifyError(f"empty ball at radius {r}")
        v = u[m]
        out.append(float(v.max() - v.min()))
    return np.array(out)


def holder_fit(solve: FractionalSolve, center, radii: Sequence[float]) -> HolderFit:
    """Least-squares ``alpha`` in ``osc_{B_rho} u ~ C rho^alpha``."""
    radii = np.asarray(radii, float)
    if len(radii) < 4:
        raise VerifyError("Hoelder fit needs at least 4 radii")
    u = np.asarray(solve.solution, float)
    osc = _oscillations(u, solve.points, center, radii)
    if np.all(osc <= 1e-14 * max(np.abs(u).max(), 1e-300)):
        return HolderFit(np.atleast_1d(center), radii, osc, None, None, applicable=False)
    if np.any(osc <= 0):
        raise VerifyError("oscillation vanishes on part of the radius range")
    a, C, res, trimmed = _fit_loglog(radii, osc)
    return HolderFit(np.atleast_1d(center), radii, osc, a, res, C, trimmed)


def boundary_holder_check(solve: FractionalSolve, boundary_center, radii: Sequence[float], w=None) -> HolderFit:
    """Oscillation decay over ``Omega' cap B_rho(x0)`` for ``x0`` on the boundary of ``Omega'``.

    The prefactor is normalized by the weighted L2 norm of ``u`` over
    ``B_{1/2}(x0)``.
    """
    radii = np.asarray(radii, float)
    if len(radii) < 4:
        raise VerifyError("Hoelder fit needs at least 4 radii")
    pts = solve.points
    u = np.asarray(solve.solution, float)
    x0 = np.atleast_1d(boundary_center)
    d = np.linalg.norm(pts - x0, axis=1)
    inside = solve.interior_mask
    spacing = np.min(np.diff(np.unique(pts[:, 0]))) if len(pts) > 1 else 1.0
    near = d <= 1.01 * spacing * math.sqrt(pts.shape[1])
    if not (np.any(near & inside) and np.any(near & ~inside)):
        raise VerifyError("center does not lie on the boundary of the interior set")
    osc = _oscillations(u, pts, x0, radii, subset=inside | (d <= 0))
    w = np.ones(len(u)) if w is None else np.asarray(w, float)
    half = d <= 0.5
    l2 = float(np.sqrt(np.sum(u[half] ** 2 * w[half]) / max(np.sum(w[half]), 1e-300)))
    if np.all(osc <= 1e-14 * max(np.abs(u).max(), 1e-300)):
        return HolderFit(x0, radii, osc, None, None, applicable=False)
    a, C, res, trimmed = _fit_loglog(radii, osc)
    return HolderFit(x0, radii, osc, a, res, C / l2 if l2 > 0 else None, trimmed)


# ---------------------------------------------------- nondivergence scans


def difference_quotients(grid: GridSpec, u: np.ndarray):
    """First and second centered differences of lattice data (periodic wrap or zero padding)."""
    shape = grid.unknown_shape
    U = np.asarray(u, float).reshape(shape)
    pad = grid.periodic
    h = grid.h

    def shift(X, k, ax):
        if pad:
            return np.roll(X, -k, axis=ax)
        out = np.zeros_like(X)
        src = [slice(None)] * X.ndim
        dst = [slice(None)] * X.ndim
        if k > 0:
            src[ax], dst[ax] = slice(k, None), slice(None, -k)
        else:
            src[ax], dst[ax] = slice(None, k), slice(-k, None)
        out[tuple(dst)] = X[tuple(src)]
        return out

    first = [(shift(U, 1, a) - shift(U, -1, a)) / (2 * h[a]) for a in range(grid.dim)]
    second = []
    for a in range(grid.dim):
        for b in range(grid.dim):
            if a == b:
                second.append((shift(U, 1, a) - 2 * U + shift(U, -1, a)) / h[a] ** 2)
            else:
                second.append((shift(first[b] * 2 * h[b], 1, a) - shift(first[b] * 2 * h[b], -1, a)) / (4 * h[a] * h[b]))
    return first, second


def lp_norm(grid: GridSpec, f: np.ndarray, p: float) -> float:
    return float((np.sum(np.abs(f) ** p) * np.prod(grid.h)) ** (1.0 / p))


def w2p_ratio(T: AssembledOperator, u: np.ndarray, p: float) -> float:
    """``||u||_{W^{2,p}} / (||u||_p + ||T u||_p)`` with difference-quotient Sobolev norms."""
    grid = T.grid
    first, second = difference_quotients(grid, u)
    num = lp_norm(grid, u, p) + sum(lp_norm(grid, f, p) for f in first) + sum(lp_norm(grid, s, p) for s in second)
    den = lp_norm(grid, u, p) + lp_norm(grid, T.matrix @ u, p)
    return float(num / den)


def smooth_random_fields(grid: GridSpec, count: int, seed: int, modes: int = 4) -> np.ndarray:
    """Low-pass random fields from seeded Fourier coefficients (grid independent)."""
    rng = np.random.default_rng(seed)
    pts = grid.nodes()
    lo = np.array([e[0] for e in grid.extents])
    L = np.array([e[1] - e[0] for e in grid.extents])
    xi = (pts - lo) / L
    out = []
    for _ in range(count):
        f = np.zeros(len(pts))
        for k in np.ndindex(*(modes,) * grid.dim):
            kk = np.array(k) + 1
            amp = rng.standard_normal() / float(np.sum(kk**2))
            ph = rng.uniform(0, 2 * np.pi, grid.dim)
            if grid.periodic:
                f += amp * np.prod(np.cos(2 * np.pi * kk * xi + ph), axis=1)
            else:
                f += amp * np.prod(np.sin(np.pi * kk * xi), axis=1) * math.cos(ph[0])
        out.append(f)
    return np.array(out)


def w2p_global_scan(T: AssembledOperator, p: float = 2.0, samples: int = 8, seed: int = 0, fields=None) -> dict:
    """Largest ratio ``||u||_{W^{2,p}} / (||u||_p + ||L u||_p)`` over sampled ``u``."""
    if T.family != "nondivergence":
        raise VerifyError("w2p scan expects a nondivergence operator")
    if not p > 1:
        raise VerifyError("p must be > 1")
    U = smooth_random_fields(T.grid, samples, seed) if fields is None else np.atleast_2d(fields)
    ratios = [w2p_ratio(T, u, p) for u in U]
    return {"C": float(max(ratios)), "ratios": ratios, "p": p}


def c1alpha_probe(
    solve: FractionalSolve,
    grid: GridSpec,
    alphas: Sequence[float],
    p: float = 2.0,
    center=None,
    radii: Optional[Sequence[float]] = None,
) -> dict:
    """Oscillation decay of the discrete gradient of a nondivergence fractional solution.

    Refuses ``sigma >= p/(p+1)``.  For each ``alpha`` the check passes when
    the fitted decay exponent ``beta`` of ``osc_{B_rho} grad_h u`` satisfies
    ``beta >= alpha``; constant solutions pass with zero oscillation.
    """
    lim = p / (p + 1)
    if not 0 < solve.sigma < lim:
        raise VerifyError(f"sigma={solve.sigma} outside the admissible range 0 < sigma < p/(p+1) = {lim:.6g}")
    u = np.asarray(solve.solution, float)
    first, _ = difference_quotients(grid, u)
    pts = solve.points
    inside = solve.interior_mask
    if center is None:
        center = pts[inside].mean(axis=0)
    if radii is None:
        # multiples of h up to half the distance from the center to the complement
        hmin = float(grid.h.min())
        gap = float(np.linalg.norm(pts[~inside] - np.atleast_1d(center), axis=1).min()) if np.any(~inside) else np.inf
        k = int(min(6, math.floor(0.5 * gap / hmin + 1e-9)))
        if k < 4:
            raise VerifyError("interior set too small for a gradient-oscillation fit (need 4 radii)")
        radii = hmin * np.arange(1, k + 1)
    radii = np.asarray(radii, float)
    ok = inside
    osc = np.zeros(len(radii))
    d = np.linalg.norm(pts - np.atleast_1d(center), axis=1)
    for G in first:
        g = G.ravel()
        for k, r in enumerate(radii):
            m = (d <= r * (1 + 1e-12)) & ok
            if not np.any(m):
                raise VerifyError(f"empty ball at radius {r}")
            osc[k] = max(osc[k], float(g[m].max() - g[m].min()))
    scale = max(max(np.abs(G).max() for G in first), 1e-300)
    if np.all(osc <= 1e-12 * scale):
        return {"beta": None, "per_alpha": {float(a): True for a in alphas}, "passed": True, "oscillations": osc.tolist()}
    beta, C, res, trimmed = _fit_loglog(radii, np.maximum(osc, 1e-300))
    per = {float(a): bool(beta >= a) for a in alphas}
    return {
        "beta": beta,
        "residual": res,
        "trimmed": trimmed,
        "per_alpha": per,
        "passed": bool(all(per.values()) and beta > 0),
        "oscillations": osc.tolist(),
        "radii": radii.tolist(),
    }


# --------------------------------------------------------------- flag


def flag_condition_check(a: CoeffField, grid: GridSpec, points=None, radius: Optional[float] = None, tol: float = 0.0) -> dict:
    """Nested index chains ``I_1 < I_2 < ... < I_n`` at sampled lattice nodes.

    ``I_{j+1}`` adds the smallest index ``i`` whose ``a_i`` does not vanish
    identically on ``(x + span{e_k : k in I_j}) cap N``, with ``N`` the
    lattice nodes within ``radius`` of ``x``.
    """
    if a.kind != "diagonal-a":
        raise VerifyError("flag condition applies to diagonal-a fields")
    pts = grid.lattice_points()
    radius = 2.0 * float(grid.h.max()) if radius is None else radius
    idx = grid.unknown_index() if points is None else np.asarray(points, dtype=int)
    results = []
    for p in idx:
        x = pts[p]
        nb = np.linalg.norm(pts - x, axis=1) <= radius * (1 + 1e-12)
        chain = []
        I = []
        ok = True
        for _ in range(grid.dim):
            free = np.zeros(grid.dim, dtype=bool)
            free[I] = True
            on_slice = nb & np.all(np.isclose(pts[:, ~free], x[~free]), axis=1)
            live = [i for i in range(grid.dim) if i not in I and np.any(a.values[on_slice, i] > tol)]
            if not live:
                ok = False
                break
            I = sorted(I + [live[0]])
            chain.append([i + 1 for i in I])
        results.append({"node": int(p), "passed": ok, "chain": chain})
    return {"passed": all(r["passed"] for r in results), "points": results}
