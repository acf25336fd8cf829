"""Structural scalars attached to weights and coefficient fields.

Ball families, discrete Muckenhoupt A2 constants (including the product
weight ``w(x)|y|^(1-2 sigma)`` on the extended grid), BMO norms, sector angles
and the subunit distance of a diagonal vector-field system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .grid import CoeffField, GridError, GridSpec, WeightField

METRICS = ("euclidean", "cube", "subunit")


@dataclass
class BallFamily:
    """Discrete balls as index sets into a point cloud (usually the lattice)."""

    metric: str
    centers: np.ndarray
    radii: np.ndarray
    members: list = field(repr=False)
    dropped: int = 0
    doubled: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise GridError(f"unknown metric {self.metric!r}")
        self.centers = np.asarray(self.centers, dtype=int)
        self.radii = np.asarray(self.radii, dtype=float)
        if not (len(self.centers) == len(self.radii) == len(self.members)):
            raise GridError("centers, radii and members must have equal length")
        if np.any(self.radii <= 0):
            raise GridError("ball radii must be > 0")
        for k, m in enumerate(self.members):
            if len(m) == 0:
                raise GridError(f"empty ball (center {self.centers[k]}, r={self.radii[k]})")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(zip(self.centers, self.radii, self.members))


def dyadic_radii(h: float, rmax: float) -> np.ndarray:
    """``h * 2**k`` for k >= 1 up to ``rmax``."""
    out = []
    r = 2.0 * h
    while r <= rmax * (1 + 1e-12):
        out.append(r)
        r *= 2.0
    return np.array(out)


def _query(tree: cKDTree, pts: np.ndarray, c: np.ndarray, r: float, metric: str) -> np.ndarray:
    p = np.inf if metric == "cube" else 2.0
    # tiny slack so lattice nodes exactly at distance r are included
    return np.sort(np.asarray(tree.query_ball_point(c, r * (1 + 1e-12), p=p), dtype=int))


def point_balls(
    points: np.ndarray,
    centers: Optional[Sequence[int]] = None,
    radii: Optional[Sequence[float]] = None,
    metric: str = "euclidean",
    box: Optional[Sequence] = None,
    container: Optional[np.ndarray] = None,
) -> BallFamily:
    """Ball family on an arbitrary point cloud.

    Every (center, radius) pair is used.  A pair is kept only when the
    doubled ball stays inside ``box`` (list of per-axis intervals) and, if
    ``container`` (boolean mask over points) is given, every point of the
    doubled ball lies in the container.
    """
    if metric not in ("euclidean", "cube"):
        raise GridError("point_balls supports euclidean and cube metrics")
    points = np.asarray(points, float)
    if points.ndim == 1:
        points = points[:, None]
    tree = cKDTree(points)
    cidx = np.arange(len(points)) if centers is None else np.asarray(centers, dtype=int)
    if radii is None:
        span = points.max(axis=0) - points.min(axis=0)
        spacing = np.min(np.diff(np.unique(points[:, 0]))) if len(np.unique(points[:, 0])) > 1 else 1.0
        radii = dyadic_radii(spacing, float(np.max(span)) / 2)
    radii = np.atleast_1d(np.asarray(radii, float))
    cs, rs, ms, ds = [], [], [], []
    dropped = 0
    for c in cidx:
        x = points[c]
        for r in radii:
            if box is not None:
                lo = np.array([b[0] for b in box])
                hi = np.array([b[1] for b in box])
                if np.any(x - 2 * r < lo - 1e-12) or np.any(x + 2 * r > hi + 1e-12):
                    dropped += 1
                    continue
            big = _query(tree, points, x, 2 * r, metric)
            if container is not None and not np.all(container[big]):
                dropped += 1
                continue
            cs.append(c)
            rs.append(r)
            ms.append(_query(tree, points, x, r, metric))
            ds.append(big)
    return BallFamily(metric, np.array(cs, dtype=int), np.array(rs), ms, dropped, ds)


def grid_balls(
    grid: GridSpec,
    centers: Optional[Sequence[int]] = None,
    radii: Optional[Sequence[float]] = None,
    metric: str = "euclidean",
    container: Optional[np.ndarray] = None,
) -> BallFamily:
    """Default ball family on the lattice of ``grid``.

    Centers default to every lattice node and radii to ``h * 2**k``; only
    balls whose double lies inside the grid extents are kept.  ``container``
    is an optional boolean mask over lattice nodes (a discrete open set).
    """
    pts = grid.lattice_points()
    if radii is None:
        radii = dyadic_radii(float(grid.h.min()), grid.diameter() / 2)
    return point_balls(pts, centers, radii, metric, grid.extents, container)


def _ball_means(values: np.ndarray, balls: BallFamily) -> np.ndarray:
    return np.array([values[m].mean() for m in balls.members])


def a2_constant(w: WeightField, balls: BallFamily) -> float:
    """Discrete A2 constant ``max_B (avg_B w)^(1/2) (avg_B 1/w)^(1/2)``.

    The value is also stored in ``w.a2_constant_cache``.
    """
    if len(balls) == 0:
        raise GridError("ball family is empty")
    s = w.samples
    val = float(np.max(np.sqrt(_ball_means(s, balls) * _ball_means(1.0 / s, balls))))
    # averages of a positive function satisfy avg(w) avg(1/w) >= 1; clip roundoff
    val = max(val, 1.0)
    w.a2_constant_cache = val
    return val


def a2_constant_samples(values: np.ndarray, balls: BallFamily) -> float:
    """A2 constant of raw positive samples (no WeightField wrapper)."""
    v = np.asarray(values, float)
    if np.any(v <= 0):
        raise GridError("weight samples must be > 0")
    return max(float(np.max(np.sqrt(_ball_means(v, balls) * _ball_means(1.0 / v, balls)))), 1.0)


@dataclass
class ProductA2:
    value: float
    weight_factor: float
    y_factor: float
    sigma: float
    metric: str

    @property
    def ratio(self) -> float:
        """``[w(x)|y|^(1-2s)] / ([w] [|y|^(1-2s)])``, the fitted comparison constant."""
        return self.value / (self.weight_factor * self.y_factor)


def product_weight_a2(
    w: WeightField,
    grid: GridSpec,
    sigma: float,
    y_half_points: Optional[int] = None,
    metric: str = "euclidean",
    radii: Optional[Sequence[float]] = None,
) -> ProductA2:
    """A2 constant of ``w(x) |y|^(1-2 sigma)`` on a 1D x-grid times a y-lattice.

    The y-lattice is staggered, ``y = (k + 1/2) h``, symmetric about 0 and
    with the x mesh width, so the degenerate hyperplane carries no nodes.
    The three constants use the same radii; the x and y factors are computed
    on the x lattice and the y lattice alone.
    """
    if not 0 < sigma < 1:
        raise GridError(f"sigma must lie in (0, 1), got {sigma}")
    if grid.dim != 1:
        raise GridError("product weights are formed over a 1D x-grid")
    h = float(grid.h[0])
    lo, hi = grid.extents[0]
    m = y_half_points if y_half_points is not None else grid.lattice_shape[0] // 2
    y = (np.arange(-m, m) + 0.5) * h
    yw = np.abs(y) ** (1 - 2 * sigma)
    x = grid.axis_coords(0)
    if radii is None:
        radii = dyadic_radii(h, min(hi - lo, 2 * m * h) / 4)
    Y = (float(y[0]) - 0.5 * h, float(y[-1]) + 0.5 * h)
    X, YY = np.meshgrid(x, y, indexing="ij")
    pts = np.stack([X.ravel(), YY.ravel()], axis=1)
    W = (w.samples[:, None] * yw[None, :]).ravel()
    ext = point_balls(pts, None, radii, metric, [(lo, hi), Y])
    wx = point_balls(x[:, None], None, radii, metric, [(lo, hi)])
    wy = point_balls(y[:, None], None, radii, metric, [Y])
    return ProductA2(
        a2_constant_samples(W, ext), a2_constant(w, wx), a2_constant_samples(yw, wy), sigma, metric
    )


def bmo_norm(f: np.ndarray, balls: BallFamily) -> float:
    """``max_B avg_B |f - avg_B f|``; matrix fields take the max over entries."""
    if len(balls) == 0:
        raise GridError("ball family is empty")
    f = np.asarray(f, float)
    flat = f.reshape(f.shape[0], -1)
    best = 0.0
    for m in balls.members:
        blk = flat[m]
        osc = np.abs(blk - blk.mean(axis=0)).mean(axis=0)
        best = max(best, float(osc.max()))
    return best


def sector_angle(lam: float, Lam: float) -> float:
    """``arctan(Lambda / lambda)``, always strictly below pi/2."""
    if not lam > 0:
        raise GridError(f"lambda must be > 0, got {lam}")
    if Lam < lam:
        raise GridError(f"Lambda={Lam} must be >= lambda={lam}")
    return float(np.arctan2(Lam, lam))


# ------------------------------------------------------------ subunit metric


def subunit_graph(a: CoeffField, grid: GridSpec) -> sp.csr_matrix:
    """Axis-neighbor graph with edge time ``h_j / a_j``, ``a_j`` averaged over the edge.

    Edges with zero speed are left out (infinite time).
    """
    if a.kind != "diagonal-a":
        raise GridError("subunit distance needs a diagonal-a field")
    if a.values.shape[0] != grid.lattice_size:
        raise GridError("coefficient samples do not match the grid lattice")
    shape = grid.lattice_shape
    idx = np.arange(grid.lattice_size).reshape(shape)
    rows, cols, vals = [], [], []
    for j in range(grid.dim):
        if grid.periodic:
            lo = idx.ravel()
            hi = np.roll(idx, -1, axis=j).ravel()
        else:
            sl_lo = [slice(None)] * grid.dim
            sl_hi = [slice(None)] * grid.dim
            sl_lo[j] = slice(0, -1)
            sl_hi[j] = slice(1, None)
            lo = idx[tuple(sl_lo)].ravel()
            hi = idx[tuple(sl_hi)].ravel()
        speed = 0.5 * (a.values[lo, j] + a.values[hi, j])
        ok = speed > 0
        t = grid.h[j] / speed[ok]
        rows += [lo[ok], hi[ok]]
        cols += [hi[ok], lo[ok]]
        vals += [t, t]
    n = grid.lattice_size
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _node(grid: GridSpec, p) -> int:
    if np.isscalar(p) and float(p).is_integer() and not isinstance(p, float):
        k = int(p)
        if not 0 <= k < grid.lattice_size:
            raise GridError(f"node index {k} out of range")
        return k
    x = np.atleast_1d(np.asarray(p, float))
    pts = grid.lattice_points()
    return int(np.argmin(np.linalg.norm(pts - x, axis=1)))


def subunit_distances(a: CoeffField, grid: GridSpec, sources) -> np.ndarray:
    """Rows of graph distances from each source node (``inf`` if unreachable)."""
    src = [_node(grid, s) for s in np.atleast_1d(np.asarray(sources, dtype=object))]
    G = subunit_graph(a, grid)
    return np.atleast_2d(dijkstra(G, directed=False, indices=src))


def subunit_distance(a: CoeffField, p, q, grid: GridSpec) -> float:
    """Shortest staircase-path time between two nodes (index or coordinates)."""
    d = subunit_distances(a, grid, [_node(grid, p)])[0]
    return float(d[_node(grid, q)])


def metric_balls(
    a: CoeffField,
    centers: Sequence,
    radii: Sequence[float],
    grid: GridSpec,
    container: Optional[np.ndarray] = None,
    require_inside: bool = True,
) -> BallFamily:
    """Subunit balls ``{q : delta(c, q) < r}`` over lattice nodes.

    With ``require_inside`` a pair is kept only if the doubled ball avoids
    the lattice boundary (Dirichlet grids) and lies in ``container``.
    """
    cidx = [_node(grid, c) for c in centers]
    D = subunit_distances(a, grid, cidx)
    if container is None and require_inside and not grid.periodic:
        container = grid.unknown_mask()
    cs, rs, ms, ds = [], [], [], []
    dropped = 0
    for c, row in zip(cidx, D):
        for r in radii:
            if require_inside and container is not None and not np.all(container[row < 2 * r]):
                dropped += 1
                continue
            members = np.flatnonzero(row < r)
            if len(members) == 0:
                raise GridError(f"empty subunit ball at node {c}, r={r}")
            cs.append(c)
            rs.append(float(r))
            ms.append(members)
            ds.append(np.flatnonzero(row < 2 * r))
    return BallFamily("subunit", np.array(cs, dtype=int), np.array(rs), ms, dropped, ds)
