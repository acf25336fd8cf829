"""The degenerate harmonic extension ``x(y)`` of ``x0`` along ``T``.

``x`` solves ``-T x + ((1 - 2 sigma)/y) x' + x'' = 0`` with ``x(0) = x0`` and
is bounded as ``y -> inf``.  With ``c = y**2/4`` and
``k_s = 1/(4**s Gamma(s))`` it is given by the Poisson integral

    x(y) = k_s y^(2s) int_0^inf exp(-tT) x0 exp(-c/t) t^(-1-s) dt,

and by the subordination form

    x(y) = Gamma(s)^-1 int_0^inf exp(-tT) (tT)^s x0 exp(-c/t) dt/t.

Profiles store, besides the states, three cancellation-free quantities
obtained by differentiating under the Poisson integral:

    Q(y) = (x(y) - x0) / y^(2s)
    F(y) = y^(1-2s) x'(y)
    G(y) = y^(2-2s) x''(y)

each of the form ``k_s int (exp(-tT) - 1) x0 p(2c/t) exp(-c/t) t^(-1-s) dt``
with ``p = 1``, ``p(u) = 2s - u`` and ``p(u) = (2s - u)^2 - 2s - u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gamma

from .assembly import AssembledOperator, assemble_weighted_elliptic
from .calculus import (
    CalculusError,
    QuadratureScheme,
    SemigroupOrbit,
    as_operator,
    dense,
    frac_power_apply_balakrishnan,
    orbit_integral,
)
from .grid import CoeffField, GridError, GridSpec, WeightField


class ExtensionError(RuntimeError):
    """Raised for invalid extension inputs or failed quadratures."""


def neumann_constant(sigma: float) -> float:
    """``Gamma(-s) / (4**s Gamma(s))``, the factor relating the limits to ``T^s x0``."""
    return float(gamma(-sigma) / (4.0**sigma * gamma(sigma)))


def _check_sigma(sigma: float):
    if not 0 < sigma < 1:
        raise ExtensionError(f"sigma must lie in (0, 1), got {sigma}")


def natural_scale(T) -> float:
    """``1/sqrt(||T||)`` with the row-sum norm as the top-of-spectrum estimate."""
    nrm = float(np.abs(dense(T)).sum(axis=1).max())
    return 1.0 / math.sqrt(nrm) if nrm > 0 else 1.0


def geometric_y_grid(T=None, ratio: float = 1.25, lo: float = 1e-4, hi: float = 10.0, scale: Optional[float] = None) -> np.ndarray:
    """Geometric grid ``lo * scale * ratio**k`` up to ``hi * scale``."""
    if not 1 < ratio <= 2:
        raise ExtensionError("y-grid ratio must lie in (1, 2]")
    if scale is None:
        scale = natural_scale(T) if T is not None else 1.0
    n = int(math.ceil(math.log(hi / lo) / math.log(ratio) - 1e-9))
    return lo * scale * ratio ** np.arange(n + 1)


@dataclass
class ExtensionProfile:
    sigma: float
    y_grid: np.ndarray
    states: np.ndarray
    base_operator: AssembledOperator = field(repr=False)
    quotient: Optional[np.ndarray] = field(default=None, repr=False)
    flux: Optional[np.ndarray] = field(default=None, repr=False)
    second: Optional[np.ndarray] = field(default=None, repr=False)
    route: str = "poisson"
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self.y_grid = np.asarray(self.y_grid, dtype=float)
        if np.any(self.y_grid <= 0) or np.any(np.diff(self.y_grid) <= 0):
            raise ExtensionError("y grid must be positive and strictly increasing")
        if self.states.shape[0] != len(self.y_grid) + 1:
            raise ExtensionError("states must hold x0 followed by one state per y")

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    @property
    def y(self) -> np.ndarray:
        """y values including the leading 0."""
        return np.concatenate([[0.0], self.y_grid])

    @property
    def ratio(self) -> float:
        r = self.y_grid[1:] / self.y_grid[:-1]
        return float(np.exp(np.mean(np.log(r)))) if len(r) else float("nan")

    def derivative(self, order: int) -> np.ndarray:
        """``x^(n)(y)`` on ``y_grid`` from the stored flux quantities (n <= 3)."""
        s = self.sigma
        y = self.y_grid[:, None]
        if order == 0:
            return self.states[1:]
        if self.flux is None:
            raise ExtensionError("profile carries no derivative data")
        d1 = y ** (2 * s - 1) * self.flux
        if order == 1:
            return d1
        d2 = y ** (2 * s - 2) * self.second
        if order == 2:
            return d2
        if order == 3:
            # differentiate the ODE: x''' = T x' - (1-2s)(x''/y - x'/y^2)
            M = dense(self.base_operator)
            return (M @ d1.T).T - (1 - 2 * s) * (d2 / y - d1 / y**2)
        raise ExtensionError("derivatives are available up to order 3")

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        header = "y," + ",".join(f"component_{i}" for i in range(n))
        rows = np.column_stack([self.y, self.states])
        np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")


def _refine_profile(compute: Callable[[int], dict], q: QuadratureScheme, what: str, floors: Optional[dict] = None):
    # per-key absolute floors keep quantities that cancel to round-off from never settling
    floors = floors or {}
    m = q.per_octave
    prev = compute(m)
    trace = []
    for _ in range(q.max_levels):
        m *= 2
        cur = compute(m)
        change = 0.0
        for k in cur:
            scale = max(np.abs(cur[k]).max(), floors.get(k, 0.0), 1e-300)
            change = max(change, float(np.abs(cur[k] - prev[k]).max() / scale))
        trace.append((m, change))
        if change <= q.rtol:
            return cur, trace
        prev = cur
    raise ExtensionError(f"{what}: quadrature did not settle, trace {trace}")


def extend_poisson(
    T, sigma: float, x0, y_grid=None, q: Optional[QuadratureScheme] = None, derivatives: bool = True
) -> ExtensionProfile:
    """Extension profile from the Poisson integral (no fractional power needed)."""
    _check_sigma(sigma)
    T = as_operator(T)
    x0 = np.asarray(x0, dtype=float)
    y = geometric_y_grid(T) if y_grid is None else np.asarray(y_grid, dtype=float)
    if np.any(y <= 0):
        raise ExtensionError("y grid must be positive")
    q = q or QuadratureScheme()
    s = sigma
    k = 1.0 / (4.0**s * gamma(s))
    c = y**2 / 4.0
    orbit = SemigroupOrbit(T, x0)
    yp = (y ** (2 * s))[:, None]

    def compute(m):
        out = {"state": k * yp * orbit_integral(orbit, m, -s, c)}
        if derivatives:
            out["Q"] = k * orbit_integral(orbit, m, -s, c, (1.0,), subtract=True)
            out["F"] = k * orbit_integral(orbit, m, -s, c, (2 * s, -1.0), subtract=True)
            out["G"] = k * orbit_integral(
                orbit, m, -s, c, (4 * s * s - 2 * s, -4 * s - 1, 1.0), subtract=True
            )
        return out

    xs = float(np.abs(x0).max()) if x0.size else 0.0
    ds = xs * natural_scale(T) ** (-2 * s)
    floors = {"state": xs, "Q": ds, "F": ds, "G": ds}
    try:
        res, trace = _refine_profile(compute, q, "Poisson extension", floors)
    except CalculusError as exc:
        raise ExtensionError(str(exc)) from exc
    states = np.vstack([x0[None, :], res["state"]])
    return ExtensionProfile(s, y, states, T, res.get("Q"), res.get("F"), res.get("G"), "poisson", trace)


def extend_subordination(
    T, sigma: float, x0, y_grid=None, q: Optional[QuadratureScheme] = None, t_sigma_x0=None
) -> ExtensionProfile:
    """Extension profile from the defining formula, through ``T^s x0``.

    The kernel component of ``x0`` (the limit of ``exp(-tT) x0``) is
    annihilated by ``(tT)^s`` and is added back as the constant part of the
    profile.
    """
    _check_sigma(sigma)
    T = as_operator(T)
    x0 = np.asarray(x0, dtype=float)
    y = geometric_y_grid(T) if y_grid is None else np.asarray(y_grid, dtype=float)
    q = q or QuadratureScheme()
    s = sigma
    z0 = frac_power_apply_balakrishnan(T, s, x0, q) if t_sigma_x0 is None else np.asarray(t_sigma_x0, float)
    kernel_part, _ = SemigroupOrbit(T, x0).limit()
    orbit = SemigroupOrbit(T, z0)
    c = y**2 / 4.0

    def compute(m):
        return {"state": orbit_integral(orbit, m, s, c, upper="zero") / gamma(s) + kernel_part}

    try:
        res, trace = _refine_profile(compute, q, "subordination extension", {"state": float(np.abs(x0).max())})
    except CalculusError as exc:
        raise ExtensionError(str(exc)) from exc
    states = np.vstack([x0[None, :], res["state"]])
    return ExtensionProfile(s, y, states, T, route="subordination", trace=trace)


# ------------------------------------------------------------ diagnostics


def _fd_weights(y: np.ndarray):
    """Three-point Lagrange weights for x' and x'' at interior nodes of ``y``."""
    h1 = y[1:-1] - y[:-2]
    h2 = y[2:] - y[1:-1]
    d1 = (-h2 / (h1 * (h1 + h2)), h1 / (h2 * (h1 + h2)))
    d2 = (2.0 / (h1 * (h1 + h2)), 2.0 / (h2 * (h1 + h2)))
    return d1, d2


def fd_derivatives(y: np.ndarray, X: np.ndarray):
    """Nonuniform first and second differences at ``y[1:-1]`` in difference form."""
    (a1, b1), (a2, b2) = _fd_weights(y)
    dm = X[:-2] - X[1:-1]
    dp = X[2:] - X[1:-1]
    return a1[:, None] * dm + b1[:, None] * dp, a2[:, None] * dm + b2[:, None] * dp


@dataclass
class ODEResidual:
    y: np.ndarray
    residual: np.ndarray
    relative: np.ndarray


def ode_residual(profile: ExtensionProfile) -> ODEResidual:
    """Residual of ``-T x + ((1 - 2s)/y) x' + x''`` at interior nodes of the y grid."""
    y = profile.y_grid
    if len(y) < 3:
        raise ExtensionError("ODE residual needs at least 3 y nodes")
    X = profile.states[1:]
    d1, d2 = fd_derivatives(y, X)
    M = dense(profile.base_operator)
    yi = y[1:-1][:, None]
    Tx = (M @ X[1:-1].T).T
    drift = (1 - 2 * profile.sigma) / yi * d1
    r = -Tx + drift + d2
    T = profile.base_operator
    rn = np.array([T.wnorm(v) for v in r])
    scale = np.array([T.wnorm(a) + T.wnorm(b) + T.wnorm(c) for a, b, c in zip(Tx, drift, d2)])
    rel = np.divide(rn, scale, out=np.zeros_like(rn), where=scale > 0)
    return ODEResidual(y[1:-1], rn, rel)


def observed_order(coarse: ODEResidual, fine: ODEResidual, log_ratio_coarse: float, log_ratio_fine: float) -> float:
    """Convergence order in the log step from residuals at shared y values."""
    idx = np.searchsorted(fine.y, coarse.y)
    idx = np.clip(idx, 0, len(fine.y) - 1)
    shared = np.isclose(fine.y[idx], coarse.y, rtol=1e-12)
    a = coarse.relative[shared]
    b = fine.relative[idx[shared]]
    good = (a > 0) & (b > 0)
    if not np.any(good):
        return float("inf")
    ratio = np.median(a[good] / b[good])
    return float(math.log(ratio) / math.log(log_ratio_coarse / log_ratio_fine))


def richardson(y: np.ndarray, values: np.ndarray, exponents: Sequence[float]) -> np.ndarray:
    """Value at ``y = 0`` of the fit ``L + sum_e c_e y^e`` through the given points."""
    y = np.asarray(y, float)
    ys = y / y[0]
    A = np.column_stack([np.ones_like(ys)] + [ys**e for e in exponents])
    sol = np.linalg.solve(A, values) if A.shape[0] == A.shape[1] else np.linalg.lstsq(A, values, rcond=None)[0]
    return sol[0]


@dataclass
class LimitReport:
    sigma: float
    target: np.ndarray
    estimate_quotient: np.ndarray
    estimate_flux: np.ndarray
    estimate_second: np.ndarray
    second_target: np.ndarray
    richardson_orders: tuple
    converged: bool
    spread: float

    def errors(self, T: Optional[AssembledOperator] = None) -> dict:
        nrm = (lambda v: T.wnorm(v)) if T is not None else (lambda v: float(np.linalg.norm(v)))
        tn = max(nrm(self.target), 1e-300)
        return {
            "quotient": nrm(self.estimate_quotient - self.target) / tn,
            "flux": nrm(self.estimate_flux - self.target) / tn,
            "quotient_vs_flux": nrm(self.estimate_quotient - self.estimate_flux) / tn,
            "second_abs": nrm(self.estimate_second - self.second_target),
            "second": nrm(self.estimate_second - self.second_target) / tn,
        }


def neumann_limits(profile: ExtensionProfile, oracle_Tsigma_x0, points: int = 4) -> LimitReport:
    """Extrapolate the three boundary limits from the smallest y nodes.

    The quotient, flux and second-derivative expressions all expand in the
    powers ``y^(2-2s), y^2, y^(4-2s)`` near 0, which are eliminated by a
    ``points``-point fit.  Fits on nodes ``0..points-1`` and ``1..points``
    are compared; their spread decides ``converged``.
    """
    if profile.flux is None:
        raise ExtensionError("neumann_limits needs a Poisson profile with derivative data")
    s = profile.sigma
    y = profile.y_grid
    if len(y) < points + 1:
        raise ExtensionError("not enough y nodes for the extrapolation")
    exps = tuple(sorted({round(2 - 2 * s, 12), 2.0, round(4 - 2 * s, 12)}))[: points - 1]
    cs = neumann_constant(s)
    target = cs * np.asarray(oracle_Tsigma_x0, float)
    est = {}
    spread = 0.0
    scale = max(np.abs(target).max(), np.abs(profile.quotient[0]).max(), 1e-300)
    for name, arr, fac in (
        ("q", profile.quotient, 1.0),
        ("f", profile.flux, 1.0 / (2 * s)),
        ("g", profile.second, 1.0 / (2 * s)),
    ):
        a = richardson(y[:points], fac * arr[:points], exps)
        b = richardson(y[1 : points + 1], fac * arr[1 : points + 1], exps)
        est[name] = a
        spread = max(spread, float(np.abs(a - b).max() / scale))
    return LimitReport(
        s, target, est["q"], est["f"], est["g"], (2 * s - 1) * target, exps, spread <= 1e-3, spread
    )


def derivative_bound_scan(profile: ExtensionProfile, max_order: int = 2) -> dict:
    """``sup_y y^n ||x^(n)(y)||_w / ||x0||_w`` for ``n = 0..max_order``."""
    if not 0 <= max_order <= 3:
        raise ExtensionError("max_order must lie in 0..3")
    T = profile.base_operator
    x0n = T.wnorm(profile.x0)
    if x0n == 0:
        return {n: 0.0 for n in range(max_order + 1)}
    y = profile.y_grid
    out = {}
    for n in range(max_order + 1):
        D = profile.derivative(n)
        vals = np.array([T.wnorm(d) for d in D]) * y**n
        if n == 0:
            vals = np.concatenate([[x0n], vals])
        out[n] = float(vals.max() / x0n)
    return out


def frac_norm_scan(profile: ExtensionProfile, t_sigma_x0=None, q: Optional[QuadratureScheme] = None) -> Optional[float]:
    """``sup_y ||T^s x(y)||_w / ||T^s x0||_w``; ``None`` when ``T^s x0 = 0``.

    ``T^s`` commutes with the semigroup, so ``T^s x(y)`` is the extension of
    ``T^s x0``.
    """
    T = profile.base_operator
    z0 = frac_power_apply_balakrishnan(T, profile.sigma, profile.x0, q) if t_sigma_x0 is None else t_sigma_x0
    zn = T.wnorm(z0)
    if zn <= 1e-14 * max(T.wnorm(profile.x0), 1e-300):
        return None
    ext = extend_poisson(T, profile.sigma, z0, profile.y_grid, q, derivatives=False)
    return float(max(T.wnorm(v) for v in ext.states) / zn)


def strong_limit_check(profile: ExtensionProfile, index: int = 0) -> float:
    """``||T x(y) - T x0||_w / ||T x0||_w`` at ``y_grid[index]`` (0 if ``T x0 = 0``)."""
    T = profile.base_operator
    M = dense(T)
    tx0 = M @ profile.x0
    d = T.wnorm(tx0)
    if d == 0:
        return 0.0
    return float(T.wnorm(M @ profile.states[1 + index] - tx0) / d)


# ------------------------------------------------------ extension BVP


@dataclass
class ExtensionBVPField:
    U: np.ndarray
    y: np.ndarray
    extended_weight: np.ndarray
    block_matrix: sp.csr_matrix = field(repr=False)
    sigma: float = 0.5
    base_operator: Optional[AssembledOperator] = field(default=None, repr=False)
    x_mass: Optional[np.ndarray] = field(default=None, repr=False)
    y_mass: Optional[np.ndarray] = field(default=None, repr=False)
    solver_residual: float = 0.0

    def to_csv(self, path) -> None:
        nx, ny = self.U.shape
        I, Y = np.meshgrid(np.arange(nx), self.y, indexing="ij")
        np.savetxt(
            path,
            np.column_stack([I.ravel(), Y.ravel(), self.U.ravel()]),
            delimiter=",",
            header="x_index,y_value,U",
            comments="",
            fmt=["%d", "%.17g", "%.17g"],
        )


def _power_moments(a: float, b: float, beta: float):
    """``int_a^b y^beta dy`` and ``int_a^b y^(beta+1) dy``."""
    return (b ** (beta + 1) - a ** (beta + 1)) / (beta + 1), (b ** (beta + 2) - a ** (beta + 2)) / (beta + 2)


def y_matrices(y: np.ndarray, sigma: float):
    """P1 stiffness and lumped mass in y with the weight ``y^(1-2s)``, exact element integrals."""
    beta = 1.0 - 2.0 * sigma
    n = len(y)
    K = sp.lil_matrix((n, n))
    m = np.zeros(n)
    for e in range(n - 1):
        a, b = y[e], y[e + 1]
        h = b - a
        i0, i1 = _power_moments(a, b, beta)
        K[e, e] += i0 / h**2
        K[e + 1, e + 1] += i0 / h**2
        K[e, e + 1] -= i0 / h**2
        K[e + 1, e] -= i0 / h**2
        # int y^beta (y - a)/h and int y^beta (b - y)/h
        up = (i1 - a * i0) / h
        m[e + 1] += up
        m[e] += i0 - up
    return K.tocsr(), m


def smallest_positive_eigenvalue(T: AssembledOperator) -> float:
    """Smallest nonzero eigenvalue of a weighted-symmetric operator (dense)."""
    d = np.sqrt(T.inner_weight)
    H = T.stiffness().toarray() / d[:, None] / d[None, :]
    lam = np.linalg.eigvalsh(0.5 * (H + H.T))
    pos = lam[lam > 1e-10 * max(lam[-1], 1e-300)]
    return float(pos[0]) if len(pos) else 1.0


def bvp_y_nodes(Y: float, y1: float, ratio: float) -> np.ndarray:
    """``0`` followed by a geometric grid from ``y1`` to ``Y``."""
    n = int(math.ceil(math.log(Y / y1) / math.log(ratio) - 1e-9))
    return np.concatenate([[0.0], Y * (y1 / Y) ** (1 - np.arange(n + 1) / n)])


def bvp_refinement_nodes(
    T: AssembledOperator,
    sigma: float,
    level: int,
    log_step: float = 0.2,
    y1_factor: float = 1e-3,
    shrink: Optional[float] = None,
    extent: float = 20.0,
) -> np.ndarray:
    """y nodes for refinement ``level`` of the extension BVP.

    Each level halves the log step (second-order error) and divides the
    first positive node by ``shrink``.  The error near ``y = 0`` decays like
    ``y1^(2s)``, so the default ``shrink = 2^(1/s)`` makes both error sources
    drop by 4 per level.  ``extent`` (in units of ``lambda_min^-1/2``) keeps
    the truncation error near ``exp(-2 extent)``.
    """
    shrink = 2.0 ** (1.0 / sigma) if shrink is None else shrink
    scale = 1.0 / math.sqrt(smallest_positive_eigenvalue(T))
    lr = log_step / 2**level
    y1 = y1_factor * scale / shrink**level
    return bvp_y_nodes(extent * scale, y1, math.exp(lr))


def solve_extension_bvp(
    grid: GridSpec,
    A: CoeffField,
    w: Optional[WeightField],
    sigma: float,
    boundary_data,
    y_extent: Optional[float] = None,
    y_points: int = 40,
    y_min: Optional[float] = None,
    y_nodes=None,
) -> ExtensionBVPField:
    """Solve the weighted extension problem on ``Omega x (0, Y]``.

    The bilinear form ``int (A grad_x U . grad_x V + U_y V_y) w(x) y^(1-2s)``
    is discretized as ``S_x (x) diag(m_y) + diag(w) (x) K_y`` with the x
    stiffness of the base operator and P1 elements in y.  ``U(., 0)`` is the
    boundary data, the top ``y = Y`` carries the natural (zero-flux)
    condition and the x boundary condition is that of ``grid``.
    """
    _check_sigma(sigma)
    T = assemble_weighted_elliptic(grid, A, w)
    wx = T.inner_weight
    Sx = T.stiffness()
    u0 = np.asarray(boundary_data, float)
    if u0.shape != (T.n,):
        raise ExtensionError(f"boundary data must have length {T.n}")
    if y_nodes is None:
        if y_points < 8:
            raise ExtensionError("y_points must be >= 8")
        scale = 1.0 / math.sqrt(smallest_positive_eigenvalue(T))
        Y = 10.0 * scale if y_extent is None else float(y_extent)
        y1 = (1e-3 * scale) if y_min is None else float(y_min)
        y = np.concatenate([[0.0], np.geomspace(y1, Y, y_points)])
    else:
        y = np.asarray(y_nodes, float)
        if y[0] != 0 or np.any(np.diff(y) <= 0):
            raise ExtensionError("y nodes must start at 0 and increase")
    Ky, my = y_matrices(y, sigma)
    B = (sp.kron(Sx, sp.diags(my)) + sp.kron(sp.diags(wx), Ky)).tocsr()
    ny = len(y)
    free = np.ones((T.n, ny), dtype=bool)
    free[:, 0] = False
    f = free.ravel()
    Ufull = np.zeros((T.n, ny))
    Ufull[:, 0] = u0
    rhs = -B[f][:, ~f] @ Ufull.ravel()[~f]
    Bff = B[f][:, f].tocsc()
    try:
        lu = spla.splu(Bff)
        sol = lu.solve(rhs)
        # one step of iterative refinement; the y weights span many decades
        sol += lu.solve(rhs - Bff @ sol)
    except RuntimeError as exc:
        raise ExtensionError(f"extension system is singular: {exc}") from exc
    Ufull.ravel()[f] = sol
    res = float(np.linalg.norm(Bff @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    ew = wx[:, None] * np.abs(y[None, 1:]) ** (1 - 2 * sigma)
    return ExtensionBVPField(Ufull, y, ew, B, sigma, T, wx, my, res)


def bvp_flux(field: ExtensionBVPField) -> np.ndarray:
    """Rows of the block operator at ``y = 0``: the discrete weighted conormal flux."""
    ny = len(field.y)
    rows = np.arange(field.U.shape[0]) * ny
    return field.block_matrix[rows] @ field.U.ravel()


def reflect_even(field: ExtensionBVPField) -> ExtensionBVPField:
    """Even reflection ``U(x, -y) = U(x, y)`` onto ``[-Y, Y]`` with the reflected block operator."""
    y = field.y
    if y[0] != 0:
        raise ExtensionError("field must start at y = 0")
    yr = np.concatenate([-y[:0:-1], y])
    Ur = np.concatenate([field.U[:, :0:-1], field.U], axis=1)
    n = len(y)
    Ky, my = y_matrices(y, field.sigma)
    # each half carries its own copy of the elements; node y = 0 collects both
    Kfull = _mirror_y(Ky, n)
    mfull = np.concatenate([my[:0:-1], [2 * my[0]], my[1:]])
    B = (sp.kron(field.base_operator.stiffness(), sp.diags(mfull)) + sp.kron(sp.diags(field.x_mass), Kfull)).tocsr()
    ew = np.concatenate([field.extended_weight[:, ::-1], field.extended_weight], axis=1)
    return ExtensionBVPField(Ur, yr, ew, B, field.sigma, field.base_operator, field.x_mass, mfull, field.solver_residual)


def _mirror_y(K: sp.csr_matrix, n: int) -> sp.csr_matrix:
    """Assemble the half-line matrix on both halves of the reflected node set."""
    K = K.tocoo()
    full = 2 * n - 1
    lo = lambda i: n - 1 - i  # node i on the negative side
    hi = lambda i: n - 1 + i
    r = np.concatenate([lo(K.row), hi(K.row)])
    c = np.concatenate([lo(K.col), hi(K.col)])
    return sp.csr_matrix((np.concatenate([K.data, K.data]), (r, c)), shape=(full, full))


def weak_residual(field: ExtensionBVPField, bumps: np.ndarray) -> np.ndarray:
    """``B U`` tested against ``phi(x) (x) delta_{y=0}`` for each bump ``phi`` (rows of ``bumps``).

    On a reflected field the ``y = 0`` row holds the flux from both sides.
    """
    y = field.y
    k0 = int(np.flatnonzero(y == 0)[0])
    ny = len(y)
    r = field.block_matrix @ field.U.ravel()
    r0 = r.reshape(field.U.shape[0], ny)[:, k0]
    return np.asarray(bumps, float) @ r0


def bump_functions(grid: GridSpec, centers: Sequence[float], radius: float) -> np.ndarray:
    """Smooth bumps ``exp(-1/(1 - |x-c|^2/r^2))`` sampled at the unknowns of ``grid``."""
    pts = grid.nodes()
    out = []
    for c in centers:
        d2 = np.sum((pts - np.atleast_1d(c)) ** 2, axis=1) / radius**2
        b = np.zeros(len(pts))
        inside = d2 < 1
        b[inside] = np.exp(-1.0 / (1.0 - d2[inside]))
        out.append(b)
    return np.array(out)


# ---------------------------------------------------------- closed forms


def bessel_profile(lam: float, sigma: float, y) -> np.ndarray:
    """Scalar extension ``2^(1-s)/Gamma(s) (sqrt(lam) y)^s K_s(sqrt(lam) y)`` (``1`` at ``y = 0``)."""
    from scipy.special import kv

    y = np.asarray(y, float)
    z = math.sqrt(lam) * y
    out = np.ones_like(z)
    nz = z > 0
    out[nz] = 2 ** (1 - sigma) / gamma(sigma) * z[nz] ** sigma * kv(sigma, z[nz])
    return out


def truncated_bessel_profile(lam: float, sigma: float, y, Y: float) -> np.ndarray:
    """Scalar solution on ``(0, Y]`` with ``u(0) = 1`` and ``u'(Y) = 0``."""
    from scipy.special import iv, kv

    y = np.asarray(y, float)
    s = math.sqrt(lam)
    alpha = 2 ** (1 - sigma) * s**sigma / gamma(sigma)
    beta = alpha * kv(sigma - 1, s * Y) / iv(sigma - 1, s * Y)
    out = np.ones_like(y)
    nz = y > 0
    yy = y[nz]
    out[nz] = yy**sigma * (alpha * kv(sigma, s * yy) + beta * iv(sigma, s * yy))
    return out
