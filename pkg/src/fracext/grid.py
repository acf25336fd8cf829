"""Rectangular grids and the fields sampled on them.

Fields live on the *lattice*: every node of the grid for Dirichlet-eliminated
boundaries (boundary nodes included, they carry coefficient values for the
faces touching the boundary), and the ``points - 1`` distinct nodes per axis
for periodic boundaries.  Unknowns of an assembled operator are the interior
lattice nodes (Dirichlet) or all lattice nodes (periodic).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

BOUNDARIES = ("dirichlet-eliminated", "periodic")
COEFF_KINDS = ("matrix-A", "diagonal-a", "nondiv-A")

DEFAULT_EPS = 1e-12


class GridError(ValueError):
    """Raised for inconsistent grids or field samples."""


@dataclass(frozen=True)
class GridSpec:
    dim: int
    extents: tuple
    points_per_axis: int
    boundary: str = "dirichlet-eliminated"

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"dim must be 1 or 2, got {self.dim}")
        ext = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        if len(ext) != self.dim:
            raise GridError(f"need {self.dim} extents, got {len(ext)}")
        for lo, hi in ext:
            if not hi > lo:
                raise GridError(f"degenerate extent [{lo}, {hi}]")
        object.__setattr__(self, "extents", ext)
        if int(self.points_per_axis) < 3:
            raise GridError("points_per_axis must be >= 3")
        object.__setattr__(self, "points_per_axis", int(self.points_per_axis))
        if self.boundary not in BOUNDARIES:
            raise GridError(f"unknown boundary {self.boundary!r}")

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def h(self) -> np.ndarray:
        """Mesh width per axis."""
        return np.array([(hi - lo) / (self.points_per_axis - 1) for lo, hi in self.extents])

    @property
    def lattice_shape(self) -> tuple:
        n = self.points_per_axis - 1 if self.periodic else self.points_per_axis
        return (n,) * self.dim

    @property
    def lattice_size(self) -> int:
        return int(np.prod(self.lattice_shape))

    def axis_coords(self, axis: int) -> np.ndarray:
        lo, _ = self.extents[axis]
        return lo + self.h[axis] * np.arange(self.lattice_shape[axis])

    def lattice_points(self) -> np.ndarray:
        """Coordinates of all lattice nodes, shape (lattice_size, dim), C order."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def unknown_mask(self) -> np.ndarray:
        mask = np.ones(self.lattice_shape, dtype=bool)
        if not self.periodic:
            for a in range(self.dim):
                sl = [slice(None)] * self.dim
                sl[a] = 0
                mask[tuple(sl)] = False
                sl[a] = -1
                mask[tuple(sl)] = False
        return mask.ravel()

    def unknown_index(self) -> np.ndarray:
        """Lattice indices of the unknowns, in increasing order."""
        return np.flatnonzero(self.unknown_mask())

    @property
    def n_unknowns(self) -> int:
        return int(self.unknown_mask().sum())

    @property
    def unknown_shape(self) -> tuple:
        if self.periodic:
            return self.lattice_shape
        return tuple(n - 2 for n in self.lattice_shape)

    def nodes(self) -> np.ndarray:
        """Coordinates of the unknowns, shape (n_unknowns, dim)."""
        return self.lattice_points()[self.unknown_index()]

    def refined(self) -> "GridSpec":
        """Same extents with the mesh width halved."""
        return GridSpec(self.dim, self.extents, 2 * self.points_per_axis - 1, self.boundary)

    def diameter(self) -> float:
        return float(np.sqrt(sum((hi - lo) ** 2 for lo, hi in self.extents)))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "extents": [list(e) for e in self.extents],
            "points": self.points_per_axis,
            "boundary": self.boundary,
        }


def _sample(grid: GridSpec, f, shape_tail=()) -> np.ndarray:
    pts = grid.lattice_points()
    if callable(f):
        vals = np.asarray(f(pts), dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(f, dtype=float), (len(pts),) + tuple(shape_tail)).copy()
    return vals


@dataclass
class WeightField:
    """Positive scalar weight sampled on the lattice."""

    samples: np.ndarray
    eps: float = 0.0
    a2_constant_cache: Optional[float] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).ravel()
        if not np.all(np.isfinite(self.samples)) or np.any(self.samples <= 0):
            raise GridError("weight samples must be finite and > 0")
        if self.a2_constant_cache is not None and self.a2_constant_cache < 1:
            raise GridError("A2 constant must be >= 1")

    @classmethod
    def constant(cls, grid: GridSpec, value: float = 1.0) -> "WeightField":
        return cls(np.full(grid.lattice_size, float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, f: Callable, eps: float = DEFAULT_EPS) -> "WeightField":
        """Sample ``f`` at lattice points and add the regularization ``eps``."""
        return cls(_sample(grid, f) + eps, eps=eps)

    @classmethod
    def power(cls, grid: GridSpec, alpha: float, eps: float = DEFAULT_EPS, center=None) -> "WeightField":
        """``|x - center|**alpha + eps``; eps also guards the node at the singularity."""
        c = np.zeros(grid.dim) if center is None else np.asarray(center, float)
        r = lambda p: np.linalg.norm(p - c, axis=1)
        if alpha < 0:
            # 0**negative is inf; the regularized value is 1/eps there
            def f(p):
                rr = r(p)
                out = np.full(len(rr), 1.0 / eps if eps > 0 else np.inf)
                nz = rr > 0
                out[nz] = rr[nz] ** alpha
                return out

            return cls(_sample(grid, f) + eps, eps=eps)
        return cls.from_function(grid, lambda p: r(p) ** alpha, eps)

    def scaled(self, c: float) -> "WeightField":
        return WeightField(self.samples * c, self.eps)

    def restrict(self, grid: GridSpec) -> np.ndarray:
        """Samples at the unknowns of ``grid``."""
        return self.samples[grid.unknown_index()]


@dataclass
class CoeffField:
    """Coefficient samples on the lattice.

    ``values`` has shape (lattice_size, dim, dim) for kinds ``matrix-A`` and
    ``nondiv-A`` and (lattice_size, dim) for ``diagonal-a``.
    """

    kind: str
    values: np.ndarray
    lam: float = field(default=None)
    Lam: float = field(default=None)
    homogeneity_orders: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in COEFF_KINDS:
            raise GridError(f"unknown coefficient kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if self.kind == "diagonal-a":
            if self.values.ndim != 2:
                raise GridError("diagonal-a values must have shape (nodes, dim)")
            if np.any(self.values < 0):
                raise GridError("diagonal coefficients a_j must be >= 0")
            if self.lam is None:
                self.lam = float(self.values.min())
            if self.Lam is None:
                self.Lam = float(self.values.max())
        else:
            if self.values.ndim != 3 or self.values.shape[1] != self.values.shape[2]:
                raise GridError(f"{self.kind} values must have shape (nodes, dim, dim)")
            lam, Lam = ellipticity_bounds(self.values)
            if self.lam is None:
                self.lam = lam
            if self.Lam is None:
                self.Lam = Lam
            if not (self.lam > 0):
                raise GridError("matrix coefficients must be uniformly elliptic (lambda > 0)")
            if lam < self.lam * (1 - 1e-12) or Lam > self.Lam * (1 + 1e-12):
                raise GridError(
                    f"samples violate stated bounds: observed [{lam}, {Lam}] vs [{self.lam}, {self.Lam}]"
                )
        if self.Lam < self.lam:
            raise GridError("Lambda must be >= lambda")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def symmetric(self) -> bool:
        if self.kind == "diagonal-a":
            return True
        return bool(np.allclose(self.values, np.swapaxes(self.values, 1, 2), rtol=0, atol=1e-14))

    @classmethod
    def matrix(cls, grid: GridSpec, A, kind: str = "matrix-A", lam=None, Lam=None) -> "CoeffField":
        """``A`` is a constant (dim, dim) matrix or a callable points -> (n, dim, dim)."""
        if callable(A):
            vals = np.asarray(A(grid.lattice_points()), dtype=float)
        else:
            A = np.asarray(A, dtype=float).reshape(grid.dim, grid.dim)
            vals = np.broadcast_to(A, (grid.lattice_size, grid.dim, grid.dim)).copy()
        return cls(kind, vals, lam, Lam)

    @classmethod
    def diagonal(cls, grid: GridSpec, a, homogeneity_orders=None) -> "CoeffField":
        """``a`` is a constant length-dim vector or a callable points -> (n, dim)."""
        if callable(a):
            vals = np.asarray(a(grid.lattice_points()), dtype=float)
        else:
            vals = np.broadcast_to(np.asarray(a, float), (grid.lattice_size, grid.dim)).copy()
        return cls("diagonal-a", vals, homogeneity_orders=homogeneity_orders)

    @classmethod
    def grushin(cls, grid: GridSpec, k: int = 1) -> "CoeffField":
        """``a = (1, |x_1|**k)`` on a 2D grid."""
        if grid.dim != 2:
            raise GridError("Grushin field needs a 2D grid")
        return cls.diagonal(
            grid,
            lambda p: np.stack([np.ones(len(p)), np.abs(p[:, 0]) ** k], axis=1),
            homogeneity_orders=(k,),
        )

    def scaled(self, c: float) -> "CoeffField":
        if self.kind == "diagonal-a":
            return CoeffField(self.kind, self.values * c, homogeneity_orders=self.homogeneity_orders)
        return CoeffField(self.kind, self.values * c, self.lam * c, self.Lam * c)

    def quadratic_form(self, node: int, xi: Sequence[float], squared: bool = False) -> float:
        """Local quadratic form at a lattice node.

        For ``diagonal-a`` this is ``sum_j a_j xi_j**2``; with ``squared=True``
        it is ``sum_j a_j**2 xi_j**2``, the form of the assembled operator
        ``-div diag(a_j**2) grad``.
        """
        xi = np.asarray(xi, dtype=float)
        if self.kind == "diagonal-a":
            a = self.values[node] ** 2 if squared else self.values[node]
            return float(np.sum(a * xi**2))
        return float(xi @ self.values[node] @ xi)


def ellipticity_bounds(values: np.ndarray) -> tuple:
    """Smallest eigenvalue of the symmetric part and largest operator norm over nodes.

    These are the sharpest lambda, Lambda with ``A xi.xi >= lambda |xi|^2`` and
    ``|A xi.eta| <= Lambda |xi||eta|`` at every node.
    """
    sym = 0.5 * (values + np.swapaxes(values, 1, 2))
    lam = float(np.linalg.eigvalsh(sym).min())
    Lam = float(np.linalg.norm(values, ord=2, axis=(1, 2)).max())
    return lam, Lam
