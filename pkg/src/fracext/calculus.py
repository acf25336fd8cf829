"""Functional calculus for assembled operators.

All routines act on the dense matrix of an :class:`AssembledOperator` and
measure norms in the weighted inner product ``<u, v>_w = sum w_i u_i v_i``.

Integrals over ``t in (0, inf)`` are evaluated with the trapezoid rule in
``s = log t`` on the whole line.  The integrands are analytic in a strip
around the real axis, so the rule converges geometrically in the node
spacing.  Only a middle window of nodes needs the semigroup itself: for
``t ||T|| <= 0.05`` the Taylor series of ``exp(-tT)`` is summed over all
remaining nodes in closed form, and once ``exp(-tT) v`` has stagnated the
tail is a geometric series.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.special import gamma

from .assembly import AssembledOperator, from_matrix

DENSE_CAP = 4096
DEFECTIVE_COND = 1e8
SERIES_SWITCH = 0.05
SERIES_TERMS = 14
LOG2 = math.log(2.0)


class CalculusError(RuntimeError):
    """Raised when a functional-calculus routine cannot deliver its contract."""


def as_operator(T) -> AssembledOperator:
    if isinstance(T, AssembledOperator):
        return T
    return from_matrix(np.atleast_2d(np.asarray(T, dtype=float)))


def dense(T) -> np.ndarray:
    T = as_operator(T)
    if T.n > DENSE_CAP:
        raise CalculusError(f"dense conversion capped at N={DENSE_CAP}, got N={T.n}")
    return T.dense()


def wnorm(T: AssembledOperator, v) -> float:
    return T.wnorm(v)


def _w_sqrt(T: AssembledOperator):
    d = np.sqrt(T.inner_weight)
    return d, 1.0 / d


# ----------------------------------------------------------------- spectrum


@dataclass
class Spectrum:
    values: np.ndarray
    vectors: Optional[np.ndarray]
    cond: float
    defective: bool
    normal: bool

    def apply(self, f: Callable, v) -> np.ndarray:
        """``V f(Lambda) V^-1 v``."""
        if self.defective:
            raise CalculusError(
                f"eigenvector condition number {self.cond:.3g} exceeds {DEFECTIVE_COND:.0e}; "
                "matrix treated as defective"
            )
        V = self.vectors
        c = np.linalg.solve(V, np.asarray(v, dtype=complex))
        fl = f(self.values)
        return V @ (fl[:, None] * c if c.ndim == 2 else fl * c)


def spectrum(T, cap: int = DENSE_CAP) -> Spectrum:
    """Eigenvalues sorted by real part, with a right eigenbasis.

    Operators that are self-adjoint in the weighted inner product are
    diagonalized through the symmetric matrix ``W^1/2 M W^-1/2``.
    """
    T = as_operator(T)
    if T.n > cap:
        raise CalculusError(f"spectrum capped at N={cap}, got N={T.n}")
    M = T.dense()
    try:
        if T.symmetric:
            d, di = _w_sqrt(T)
            lam, Q = np.linalg.eigh(d[:, None] * M * di[None, :])
            V = di[:, None] * Q
            order = np.argsort(lam, kind="stable")
            return Spectrum(lam[order].astype(complex), V[:, order].astype(complex), float(np.linalg.cond(V)), False, True)
        lam, V = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise CalculusError(f"eigensolve failed: {exc}") from exc
    order = np.lexsort((lam.imag, lam.real))
    lam, V = lam[order], V[:, order]
    cond = float(np.linalg.cond(V))
    return Spectrum(lam, V, cond, not np.isfinite(cond) or cond > DEFECTIVE_COND, False)


# --------------------------------------------------------------- resolvent


def resolvent_apply(T, z: complex, v, convention: str = "z-T", tol: float = 1e-10) -> np.ndarray:
    """``(z - T)^-1 v``, or ``(T - z)^-1 v`` with ``convention="T-z"``."""
    T = as_operator(T)
    M = dense(T)
    n = T.n
    sign = {"z-T": 1.0, "T-z": -1.0}.get(convention)
    if sign is None:
        raise ValueError("convention must be 'z-T' or 'T-z'")
    B = sign * (z * np.eye(n) - M)
    v = np.asarray(v)
    try:
        # exact singularity is reported below through the pivot test
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(B, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise CalculusError(f"resolvent at z={z} failed: {exc}") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(np.abs(B).max(), 1.0):
        raise CalculusError(f"z={z} lies on the spectrum to working precision")
    x = sla.lu_solve(lu, v.astype(np.result_type(B, v)))
    res = np.linalg.norm(B @ x - v) / max(np.linalg.norm(v), 1e-300)
    if res > tol:
        raise CalculusError(f"resolvent residual {res:.3g} above tolerance at z={z}")
    return x


def resolvent_wnorm(T, z: complex) -> float:
    """``||(z - T)^-1||`` as an operator on ``L^2(w)``."""
    T = as_operator(T)
    d, di = _w_sqrt(T)
    B = z * np.eye(T.n) - d[:, None] * dense(T) * di[None, :]
    s = np.linalg.svd(B, compute_uv=False)
    if s[-1] <= 1e-14 * s[0]:
        raise CalculusError(f"z={z} lies on the spectrum to working precision")
    return float(1.0 / s[-1])


@dataclass
class SectorReport:
    theta: float
    sampled_points: list
    c_theta: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "c_theta": self.c_theta,
            "passed": self.passed,
            "samples": len(self.sampled_points),
        }


def sectoriality_scan(T, theta: float, ray_samples: int = 25, span: float = 1e4) -> SectorReport:
    """Sample ``|z| ||(z - T)^-1||_w`` on the rays ``arg z = +-theta, pi``.

    Radii are log-spaced over ``[1/span, span] * ||T||``.
    """
    T = as_operator(T)
    if not T.sector_angle_hint < theta <= math.pi:
        raise CalculusError(
            f"theta={theta} must lie in (sector_angle_hint={T.sector_angle_hint}, pi]"
        )
    scale = max(float(np.abs(dense(T)).sum(axis=1).max()), 1e-300)
    radii = scale * np.logspace(-math.log10(span), math.log10(span), ray_samples)
    pts = []
    for phi in (theta, -theta, math.pi):
        for r in radii:
            z = r * np.exp(1j * phi)
            val = abs(z) * resolvent_wnorm(T, z)
            pts.append((complex(z), float(val)))
    vals = np.array([p[1] for p in pts])
    c = float(vals.max())
    return SectorReport(theta, pts, c, bool(np.all(np.isfinite(vals))))


# --------------------------------------------------------------- semigroup


def semigroup_apply(T, t: float, v) -> np.ndarray:
    """``exp(-tT) v`` by Pade scaling and squaring."""
    if t < 0:
        raise CalculusError("semigroup time must be >= 0")
    v = np.asarray(v, dtype=float)
    if t == 0:
        return v.copy()
    E = sla.expm(-t * dense(T))
    out = E @ v
    if not np.all(np.isfinite(out)):
        raise CalculusError(f"semigroup overflow at t={t}")
    return out


class SemigroupOrbit:
    """Cached values of ``exp(-tT) v`` on log-spaced times.

    Node ``(j, m)`` stands for ``t = 2**(j/m)``; keys are normalized so that
    refined rules reuse coarse nodes.  ``v`` may be a matrix of columns.
    """

    max_octaves = 80

    def __init__(self, T, v):
        self.T = as_operator(T)
        self.M = dense(self.T)
        self.v = np.asarray(v, dtype=float)
        self.norm = max(float(np.abs(self.M).sum(axis=1).max()), 1e-300)
        self._cache = {}
        self._powers = None
        self._limit = None

    @staticmethod
    def _key(j: int, m: int):
        g = math.gcd(j, m)
        return (j // g, m // g)

    def at(self, j: int, m: int) -> np.ndarray:
        key = self._key(j, m)
        if key not in self._cache:
            t = 2.0 ** (j / m)
            out = sla.expm(-t * self.M) @ self.v
            if not np.all(np.isfinite(out)):
                raise CalculusError(f"semigroup overflow at t={t}")
            self._cache[key] = out
        return self._cache[key]

    def powers(self, k: int) -> list:
        """``[(-T)^1 v, ..., (-T)^k v]``."""
        if self._powers is None or len(self._powers) < k:
            out = [-(self.M @ self.v)]
            while len(out) < k:
                out.append(-(self.M @ out[-1]))
            self._powers = out
        return self._powers[:k]

    def series_index(self, m: int) -> int:
        """Largest node index j with ``t ||T|| <= SERIES_SWITCH``."""
        return math.floor(m * math.log2(SERIES_SWITCH / self.norm))

    def limit(self, tol: float = 1e-15):
        """``(P0 v, j_stag)`` with ``P0 v = lim exp(-tT) v`` and the octave where it settles.

        Stagnation means two consecutive octave steps changing the orbit by
        at most ``tol * ||v||``.
        """
        if self._limit is None:
            j = self.series_index(1) + 1
            vn = max(np.abs(self.v).max(), 1e-300)
            prev = self.at(j, 1)
            calm = 0
            for _ in range(self.max_octaves):
                j += 1
                cur = self.at(j, 1)
                calm = calm + 1 if np.abs(cur - prev).max() <= tol * vn else 0
                prev = cur
                if calm >= 2:
                    self._limit = (cur, j)
                    break
            else:
                raise CalculusError(f"semigroup orbit did not settle within {self.max_octaves} octaves")
        return self._limit


@dataclass
class QuadratureScheme:
    """Log-substitution trapezoid on ``(0, inf)``.

    ``nodes`` is the starting number of nodes per unit of ``log2 t`` times
    four (so the default 8 means two nodes per octave); the rule is refined
    by doubling until two consecutive levels agree to ``rtol``.  ``lower_cut``
    and ``upper_cut`` override the automatic series/stagnation switches.
    """

    substitution: str = "log"
    nodes: int = 8
    lower_cut: Optional[float] = None
    upper_cut: Optional[float] = None
    rtol: float = 1e-11
    max_levels: int = 6

    def __post_init__(self):
        if self.substitution != "log":
            raise ValueError("only the log substitution is implemented")
        if self.nodes < 8:
            raise ValueError("nodes must be >= 8")
        if self.lower_cut is not None and self.lower_cut <= 0:
            raise ValueError("lower_cut must be > 0")
        if self.upper_cut is not None and self.upper_cut <= 0:
            raise ValueError("upper_cut must be > 0")
        if self.lower_cut is not None and self.upper_cut is not None and not self.lower_cut < self.upper_cut:
            raise ValueError("lower_cut must be < upper_cut")

    @property
    def per_octave(self) -> int:
        return max(self.nodes // 4, 2)

    def to_dict(self) -> dict:
        return {
            "substitution": self.substitution,
            "nodes": self.nodes,
            "lower_cut": self.lower_cut,
            "upper_cut": self.upper_cut,
            "rtol": self.rtol,
        }


def _refine(rule: Callable[[int], np.ndarray], q: QuadratureScheme, what: str, floor: float = 0.0):
    # ``floor`` keeps results that cancel to round-off (kernel vectors) from never settling
    m = q.per_octave
    prev = rule(m)
    trace = []
    for _ in range(q.max_levels):
        m *= 2
        cur = rule(m)
        scale = max(np.abs(cur).max(), floor, 1e-300)
        change = float(np.abs(cur - prev).max() / scale)
        trace.append((m, change))
        if change <= q.rtol or np.abs(cur).max() == 0:
            return cur, m, trace
        prev = cur
    raise CalculusError(f"{what}: quadrature did not settle, trace {trace}")


def _balakrishnan_sum(orbit: SemigroupOrbit, sigma: float, m: int, q: QuadratureScheme) -> np.ndarray:
    """Trapezoid sum of ``int (exp(-tT) - 1) v t^(-sigma) ds`` over the whole line."""
    ds = LOG2 / m
    j0 = orbit.series_index(m)
    if q.lower_cut is not None:
        j0 = min(j0, math.floor(m * math.log2(q.lower_cut)))
    P, joct = orbit.limit()
    j1 = joct * m
    if q.upper_cut is not None:
        j1 = max(j1, math.ceil(m * math.log2(q.upper_cut)))
    v = orbit.v
    total = np.zeros_like(v, dtype=float)
    # nodes j <= j0: exp(-tT) - 1 = sum_k (-T)^k t^k / k!
    s0 = j0 * ds
    for k, Pk in enumerate(orbit.powers(SERIES_TERMS), start=1):
        a = k - sigma
        total += Pk / math.factorial(k) * (math.exp(a * s0) / -math.expm1(-a * ds))
    for j in range(j0 + 1, j1 + 1):
        s = j * ds
        total += (orbit.at(j, m) - v) * math.exp(-sigma * s)
    # nodes j > j1: the orbit sits at its limit
    total += (P - v) * (math.exp(-sigma * (j1 + 1) * ds) / -math.expm1(-sigma * ds))
    return total * ds


def frac_power_apply_balakrishnan(
    T, sigma: float, v, q: Optional[QuadratureScheme] = None, orbit: Optional[SemigroupOrbit] = None
) -> np.ndarray:
    """``T^sigma v = Gamma(-sigma)^-1 int_0^inf (exp(-tT) - 1) v t^(-1-sigma) dt``."""
    if not 0 < sigma < 1:
        raise CalculusError(f"Balakrishnan route needs sigma in (0, 1), got {sigma}")
    q = q or QuadratureScheme()
    orbit = orbit or SemigroupOrbit(T, v)
    floor = float(np.abs(orbit.v).max()) if np.size(orbit.v) else 0.0
    val, _, _ = _refine(lambda m: _balakrishnan_sum(orbit, sigma, m, q), q, "Balakrishnan", floor)
    return val / gamma(-sigma)


def frac_power_apply_spectral(T, sigma: float, v, spec: Optional[Spectrum] = None, ztol: float = 1e-10) -> np.ndarray:
    """``V diag(lambda^sigma) V^-1 v`` on the principal branch with ``0^sigma = 0``."""
    if not 0 < sigma <= 1:
        raise CalculusError(f"sigma must lie in (0, 1], got {sigma}")
    T = as_operator(T)
    spec = spec or spectrum(T)
    lam = spec.values
    scale = max(np.abs(lam).max(), 1e-300)
    zero = np.abs(lam) <= ztol * scale
    if np.any(lam[~zero].real <= 0):
        raise CalculusError("spectrum leaves the open right half-plane")

    def f(z):
        out = np.zeros_like(z, dtype=complex)
        out[~zero] = np.exp(sigma * np.log(z[~zero]))
        return out

    out = spec.apply(f, v)
    return out.real if np.isrealobj(v) else out


def frac_power_matrix(T, sigma: float, route: str = "auto", q: Optional[QuadratureScheme] = None) -> np.ndarray:
    """Dense ``T^sigma``; ``route`` is ``spectral``, ``balakrishnan`` or ``auto``."""
    T = as_operator(T)
    eye = np.eye(T.n)
    if sigma == 1:
        return dense(T)
    if route in ("spectral", "auto"):
        spec = spectrum(T)
        if not spec.defective:
            return frac_power_apply_spectral(T, sigma, eye, spec)
        if route == "spectral":
            raise CalculusError("spectral route refused: defective matrix")
    return frac_power_apply_balakrishnan(T, sigma, eye, q)


# -------------------------------------------------------- phi(T) by contour


@dataclass
class PhiResult:
    value: np.ndarray
    bound_ratio: float
    sup_phi: float
    nodes: int


def phi_of_T(
    T,
    phi: Callable,
    v,
    decay: Optional[float] = None,
    angle: Optional[float] = None,
    rtol: float = 1e-11,
) -> PhiResult:
    """``phi(T) v = (2 pi i)^-1 int phi(z) (z - T)^-1 v dz`` over the sector boundary.

    The boundary of ``{|arg z| < angle}`` is traversed counterclockwise
    around the spectrum and each ray is integrated by the trapezoid rule in
    ``log |z|``.  ``decay`` is the exponent ``s`` in
    ``|phi(z)| <= c min(|z|, 1/|z|)^s`` and fixes the truncation.
    """
    if decay is None or not decay > 0:
        raise CalculusError("phi needs a declared positive decay exponent")
    T = as_operator(T)
    M = dense(T)
    n = T.n
    if angle is None:
        angle = 0.5 * (T.sector_angle_hint + math.pi / 2)
    if not T.sector_angle_hint < angle < math.pi:
        raise CalculusError("contour angle must exceed the sector angle hint")
    v = np.asarray(v, dtype=float)
    absM = np.abs(M).sum(axis=1).max()
    lo = math.log(max(absM, 1e-300)) - 40.0 / decay - 10.0
    hi = math.log(max(absM, 1e-300)) + 40.0 / decay + 5.0
    cache = {}

    def node(u: float, sgn: int):
        key = (round(u * 2**20), sgn)
        if key not in cache:
            e = np.exp(1j * sgn * angle)
            z = math.exp(u) * e
            x = np.linalg.solve(z * np.eye(n) - M, v.astype(complex))
            # dz = z du along the ray
            cache[key] = (phi(z) * z * x, abs(phi(z)))
        return cache[key]

    def rule(k: int):
        du = 2.0 ** (-k)
        us = np.arange(math.floor(lo / du), math.ceil(hi / du) + 1) * du
        acc = np.zeros(v.shape, dtype=complex)
        for u in us:
            lower, _ = node(u, -1)
            upper, _ = node(u, 1)
            acc += lower - upper
        return acc * du / (2j * math.pi)

    k = 2
    prev = rule(k)
    for _ in range(8):
        k += 1
        cur = rule(k)
        if np.abs(cur - prev).max() <= rtol * max(np.abs(cur).max(), 1e-300):
            break
        prev = cur
    else:
        raise CalculusError("phi(T) contour quadrature did not settle")
    val = cur.real if np.abs(cur.imag).max() <= 1e-8 * max(np.abs(cur).max(), 1e-300) else cur
    sup_phi = max(c[1] for c in cache.values())
    denom = sup_phi * T.wnorm(v)
    ratio = float(T.wnorm(val) / denom) if denom > 0 else 0.0
    return PhiResult(val, ratio, float(sup_phi), len(cache))


# ---------------------------------------------------------- Dirichlet form


class FormError(CalculusError):
    """The bilinear form takes negative values (not bounded below by 0)."""


@dataclass
class FormReport:
    alpha0: float
    K: float
    K_sampled: float
    sample_count: int
    worst_pair: tuple = field(repr=False)
    min_energy: float = 0.0

    @property
    def angle(self) -> float:
        """Sector angle ``pi/2 - arctan(1/K)`` of the generated semigroup."""
        return math.pi / 2 - math.atan(1.0 / self.K)

    def to_dict(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "K": self.K,
            "K_sampled": self.K_sampled,
            "sample_count": self.sample_count,
            "angle": self.angle,
            "min_energy": self.min_energy,
        }


def dirichlet_form_check(T, samples: int = 10_000, seed: int = 0, tol: float = 1e-12) -> FormReport:
    """Lower bound and sector constant of ``E(u, v) = <T u, v>_w``.

    ``E(u, u) >= 0`` is tested on Gaussian samples and on the eigenvalues of
    the symmetric part.  The least ``K`` with
    ``|E(u, v)| <= K E(u, u)^1/2 E(v, v)^1/2`` is estimated from random pairs
    and computed exactly as ``||H^-1/2 S H^-1/2||`` on the range of the
    symmetric part ``H`` of the stiffness ``S``.
    """
    T = as_operator(T)
    S = T.inner_weight[:, None] * dense(T)
    H = 0.5 * (S + S.T)
    scale = max(np.abs(S).max(), 1e-300)
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((T.n, samples))
    V = rng.standard_normal((T.n, samples))
    Eu = np.einsum("ij,ij->j", U, S @ U)
    Ev = np.einsum("ij,ij->j", V, S @ V)
    Euv = np.einsum("ij,ij->j", V, S @ U)
    norms = np.einsum("ij,ij->j", U, U)
    min_e = float(np.min(Eu / norms))
    lam, Q = np.linalg.eigh(H)
    if min_e < -tol * scale or lam[0] < -1e-10 * scale:
        raise FormError(f"E(u,u) < 0 found (min sampled {min_e:.3g}, min eigenvalue {lam[0]:.3g})")
    ok = (Eu > tol * scale * norms) & (Ev > tol * scale * norms)
    K_s = float(np.max(np.abs(Euv[ok]) / np.sqrt(Eu[ok] * Ev[ok]))) if np.any(ok) else 1.0
    keep = lam > 1e-10 * max(lam[-1], 1e-300)
    R = Q[:, keep] / np.sqrt(lam[keep])
    C = R.T @ S @ R
    Uc, sv, Vt = np.linalg.svd(C)
    K = float(max(sv[0], 1.0))
    # extremal pair: E(u, v) = K E(u,u)^1/2 E(v,v)^1/2
    pair = (R @ Vt[0], R @ Uc[:, 0])
    return FormReport(0.0, max(K, K_s), K_s, samples, pair, min_e)


# ------------------------------------------- Laplace-type orbit integrals


def orbit_integral(
    orbit: SemigroupOrbit,
    m: int,
    a: float,
    cs,
    poly: Sequence[float] = (1.0,),
    subtract: bool = False,
    upper: str = "limit",
) -> np.ndarray:
    """Trapezoid sums of ``int (exp(-tT) v - [v]) t^a exp(-c/t) p(2c/t) dt/t``.

    One value per ``c`` in ``cs`` (all ``c >= 0``); ``poly`` holds the
    coefficients of ``p`` in increasing order and ``subtract`` removes ``v``
    from the orbit.  ``upper="limit"`` closes the large-t tail with the
    stagnated orbit, ``upper="zero"`` drops it (orbits decaying to 0).
    The sum runs over the whole node lattice ``s_j = j log(2)/m``.
    """
    cs = np.atleast_1d(np.asarray(cs, dtype=float))
    poly = np.asarray(poly, dtype=float)
    ds = LOG2 / m
    v = orbit.v
    k0 = 1 if subtract else 0
    j0 = orbit.series_index(m)
    P, joct = orbit.limit()
    j1 = max(joct * m, j0)
    out = np.zeros((len(cs),) + v.shape)

    def omega(s, c, shift=0.0):
        u = 2.0 * c * np.exp(-s)
        return np.exp((a + shift) * s - 0.5 * u) * np.polynomial.polynomial.polyval(u, poly)

    powers = [v] + orbit.powers(SERIES_TERMS)
    for i, c in enumerate(cs):
        # small t: exp(-tT) v = sum_k (-T)^k v t^k / k!, summed node by node in s
        stops = []
        if c > 0:
            stops.append(math.log(c / 80.0))
        if k0 + a > 0:
            stops.append(j0 * ds - 80.0 / (k0 + a))
        if not stops:
            raise CalculusError("integral diverges at t -> 0")
        jlo = math.floor(max(stops) / ds)
        s_lo = np.arange(min(jlo, j0), j0 + 1) * ds
        for k in range(k0, SERIES_TERMS + 1):
            wk = float(np.sum(omega(s_lo, c, k))) / math.factorial(k)
            out[i] += wk * powers[k]
        if upper == "limit":
            tail = (P - v) if subtract else P
            if c > 0:
                jfar = max(math.ceil(math.log(c * 1e18) / ds), j1 + 1)
                s_up = np.arange(j1 + 1, jfar) * ds
                wt = float(np.sum(omega(s_up, c)))
            else:
                jfar = j1 + 1
                wt = 0.0
            if a >= 0:
                if np.abs(tail).max() > 1e-14 * max(np.abs(v).max(), 1e-300):
                    raise CalculusError("integral diverges at t -> inf")
            else:
                wt += poly[0] * math.exp(a * jfar * ds) / -math.expm1(a * ds)
            out[i] += wt * tail
    # middle: explicit semigroup nodes shared by all c
    js = np.arange(j0 + 1, j1 + 1)
    if len(js):
        W = np.stack([omega(js * ds, c) for c in cs])
        for col, j in enumerate(js):
            Ej = orbit.at(int(j), m)
            if subtract:
                Ej = Ej - v
            out += np.multiply.outer(W[:, col], Ej)
    return out * ds
