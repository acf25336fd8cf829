"""Assembly of the three operator families on rectangular grids.

Divergence-form operators are assembled from their bilinear form.  On every
cell each corner contributes a one-sided gradient built from the two cell
edges meeting at that corner, weighted by the coefficient sampled at the
corner; the cell energy is the average over corners.  For diagonal
coefficients this reduces to face conductances equal to the arithmetic mean
of the two adjacent node values, and for ``A = I`` to the 5-point stencil.
With ``S`` the resulting stiffness and ``w`` the nodal weights the operator
is ``M = diag(w)^-1 S``, so that ``<M u, v>_w = v^T S u`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .grid import CoeffField, GridError, GridSpec, WeightField

FAMILIES = ("weighted-elliptic", "subelliptic-diagonal", "nondivergence")


@dataclass
class AssembledOperator:
    matrix: sp.csr_matrix
    inner_weight: np.ndarray
    family: str
    symmetric: bool
    sector_angle_hint: float = 0.0
    grid: Optional[GridSpec] = None
    lam: Optional[float] = None
    Lam: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        self.inner_weight = np.asarray(self.inner_weight, dtype=float).ravel()
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise GridError("operator matrix must be square")
        if self.inner_weight.shape[0] != self.matrix.shape[0]:
            raise GridError("inner_weight length must match the matrix size")
        if np.any(self.inner_weight <= 0):
            raise GridError("inner_weight must be > 0")
        if self.family not in FAMILIES:
            raise GridError(f"unknown family {self.family!r}")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def stiffness(self) -> sp.csr_matrix:
        """``diag(w) M``: the matrix of the bilinear form ``E(u, v) = v^T S u``."""
        return sp.diags(self.inner_weight) @ self.matrix

    def form(self, u, v) -> np.ndarray:
        """``E(u, v) = <M u, v>_w``; columns of 2D inputs are treated pairwise."""
        Mu = self.matrix @ u
        return np.sum((self.inner_weight * Mu.T).T * v, axis=0)

    def wnorm(self, v) -> float:
        v = np.asarray(v)
        return float(np.sqrt(np.sum(self.inner_weight * np.abs(v) ** 2)))

    def scaled(self, c: float) -> "AssembledOperator":
        return AssembledOperator(
            self.matrix * c, self.inner_weight, self.family, self.symmetric,
            self.sector_angle_hint, self.grid,
            None if self.lam is None else self.lam * c,
            None if self.Lam is None else self.Lam * c, dict(self.meta),
        )


def from_matrix(M, inner_weight=None, family="weighted-elliptic", symmetric=None, hint=None, **kw) -> AssembledOperator:
    """Wrap an explicit matrix (diagonal/triangular test operators and the like)."""
    M = sp.csr_matrix(np.atleast_2d(np.asarray(M.toarray() if sp.issparse(M) else M, dtype=float)))
    w = np.ones(M.shape[0]) if inner_weight is None else inner_weight
    if symmetric is None:
        D = sp.diags(w) @ M
        symmetric = abs(D - D.T).max() <= 1e-14 * max(abs(D).max(), 1.0)
    if hint is None:
        hint = 0.0
    return AssembledOperator(M, w, family, bool(symmetric), hint, **kw)


# --------------------------------------------------------------------- helpers


def _lattice_index(grid: GridSpec, *idx):
    shape = grid.lattice_shape
    if grid.periodic:
        idx = [np.mod(i, n) for i, n in zip(idx, shape)]
    return np.ravel_multi_index(tuple(idx), shape)


def _difference(grid: GridSpec, rows_hi, rows_lo, h) -> sp.csr_matrix:
    m = len(rows_hi)
    data = np.concatenate([np.full(m, 1.0 / h), np.full(m, -1.0 / h)])
    r = np.concatenate([np.arange(m), np.arange(m)])
    c = np.concatenate([rows_hi, rows_lo])
    return sp.csr_matrix((data, (r, c)), shape=(m, grid.lattice_size))


def _corner_gradients(grid: GridSpec):
    """Yield ``(corner_nodes, [G_0, ..., G_{d-1}], share)`` per cell corner.

    ``G_p`` maps lattice values to the one-sided derivative along axis p at
    that corner of every cell; ``share`` is the corner's weight in the cell
    average.
    """
    h = grid.h
    n = grid.lattice_shape
    ncell = [m if grid.periodic else m - 1 for m in n]
    if grid.dim == 1:
        i = np.arange(ncell[0])
        hi = _lattice_index(grid, i + 1)
        lo = _lattice_index(grid, i)
        G = _difference(grid, hi, lo, h[0])
        for corner in (lo, hi):
            yield corner, [G], 0.5
        return
    I, J = np.meshgrid(np.arange(ncell[0]), np.arange(ncell[1]), indexing="ij")
    I, J = I.ravel(), J.ravel()
    for ci in (0, 1):
        for cj in (0, 1):
            node = _lattice_index(grid, I + ci, J + cj)
            gx = _difference(grid, _lattice_index(grid, I + 1, J + cj), _lattice_index(grid, I, J + cj), h[0])
            gy = _difference(grid, _lattice_index(grid, I + ci, J + 1), _lattice_index(grid, I + ci, J), h[1])
            yield node, [gx, gy], 0.25


def _stiffness(grid: GridSpec, coef: np.ndarray, weight: np.ndarray) -> sp.csr_matrix:
    """Lattice stiffness of ``sum_pq a_pq d_q u d_p v`` with nodal (lattice) coefficients."""
    S = sp.csr_matrix((grid.lattice_size, grid.lattice_size))
    for node, G, share in _corner_gradients(grid):
        c = coef[node] * (weight[node] * share)[:, None, None]
        for p in range(grid.dim):
            for q in range(grid.dim):
                cpq = c[:, p, q]
                if np.any(cpq != 0):
                    S = S + G[p].T @ sp.diags(cpq) @ G[q]
    return S.tocsr()


def _restrict(grid: GridSpec, S: sp.csr_matrix) -> sp.csr_matrix:
    idx = grid.unknown_index()
    return S[idx][:, idx].tocsr()


def _is_symmetric(S, rtol=1e-13) -> bool:
    S = sp.csr_matrix(S)
    if S.nnz == 0:
        return True
    return bool(abs(S - S.T).max() <= rtol * abs(S).max())


def _check_sizes(grid: GridSpec, n: int, what: str):
    if n != grid.lattice_size:
        raise GridError(f"{what} has {n} samples, grid lattice has {grid.lattice_size}")


# ------------------------------------------------------------------ assembly


def assemble_weighted_elliptic(grid: GridSpec, A: CoeffField, w: Optional[WeightField] = None) -> AssembledOperator:
    """Operator of the form ``E(u, v) = sum A grad u . grad v  w`` with mass ``diag(w)``."""
    if A.kind != "matrix-A":
        raise GridError(f"weighted elliptic assembly needs a matrix-A field, got {A.kind}")
    if A.dim != grid.dim:
        raise GridError("coefficient dimension does not match the grid")
    w = WeightField.constant(grid) if w is None else w
    _check_sizes(grid, A.values.shape[0], "coefficient field")
    _check_sizes(grid, w.samples.shape[0], "weight field")
    S = _restrict(grid, _stiffness(grid, A.values, w.samples))
    wi = w.restrict(grid)
    M = sp.diags(1.0 / wi) @ S
    # constant skew parts cancel in the form, so symmetry is read off the stiffness
    sym = A.symmetric or _is_symmetric(S)
    hint = 0.0 if A.symmetric else float(np.arctan(A.Lam / A.lam))
    return AssembledOperator(
        M.tocsr(), wi, "weighted-elliptic", sym, hint, grid, A.lam, A.Lam,
        {"weight_eps": w.eps},
    )


def assemble_subelliptic_diagonal(grid: GridSpec, a: CoeffField) -> AssembledOperator:
    """``-div diag(a_j**2) grad`` with Lebesgue mass; degenerate faces get zero conductance."""
    if a.kind != "diagonal-a":
        raise GridError(f"subelliptic assembly needs a diagonal-a field, got {a.kind}")
    if a.dim != grid.dim:
        raise GridError("coefficient dimension does not match the grid")
    _check_sizes(grid, a.values.shape[0], "coefficient field")
    B = np.zeros((grid.lattice_size, grid.dim, grid.dim))
    for j in range(grid.dim):
        B[:, j, j] = a.values[:, j] ** 2
    S = _restrict(grid, _stiffness(grid, B, np.ones(grid.lattice_size)))
    lam = float((a.values**2).min())
    Lam = float((a.values**2).max())
    return AssembledOperator(S, np.ones(S.shape[0]), "subelliptic-diagonal", True, 0.0, grid, lam, Lam)


def assemble_nondivergence(grid: GridSpec, A: CoeffField) -> AssembledOperator:
    """``-a^{pq}(x_i) D_pq u`` with centered second differences and averaged cross terms."""
    if A.kind != "nondiv-A":
        raise GridError(f"nondivergence assembly needs a nondiv-A field, got {A.kind}")
    if A.dim != grid.dim:
        raise GridError("coefficient dimension does not match the grid")
    _check_sizes(grid, A.values.shape[0], "coefficient field")
    n = grid.lattice_shape
    if grid.dim == 2 and min(n) < 3:
        raise GridError("cross-difference stencil needs >= 3 nodes per axis")
    h = grid.h
    idx = grid.unknown_index()
    sub = np.array(np.unravel_index(idx, n))
    rows, cols, vals = [], [], []

    def add(coef, offsets_weights):
        for off, wgt in offsets_weights:
            tgt = _lattice_index(grid, *[sub[a] + off[a] for a in range(grid.dim)])
            rows.append(np.arange(len(idx)))
            cols.append(tgt)
            vals.append(-coef * wgt)

    a = A.values[idx]
    for p in range(grid.dim):
        e = [0] * grid.dim
        e[p] = 1
        em = [-x for x in e]
        add(a[:, p, p] / h[p] ** 2, [(tuple(e), 1.0), (tuple(em), 1.0), ((0,) * grid.dim, -2.0)])
    if grid.dim == 2:
        cross = 0.5 * (a[:, 0, 1] + a[:, 1, 0]) * 2.0 / (4.0 * h[0] * h[1])
        add(cross, [((1, 1), 1.0), ((-1, -1), 1.0), ((1, -1), -1.0), ((-1, 1), -1.0)])
    L = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(idx), grid.lattice_size),
    )
    M = L[:, idx].tocsr()
    M.sum_duplicates()
    M.eliminate_zeros()
    sym = _is_symmetric(M)
    hint = float(np.arctan(A.Lam / A.lam))
    return AssembledOperator(M, np.ones(len(idx)), "nondivergence", bool(sym), hint, grid, A.lam, A.Lam)


def export_coo(op: AssembledOperator, path) -> int:
    """Write ``row col value`` triples (0-based, 17 significant digits); return the count."""
    C = op.matrix.tocoo()
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for k in order:
            fh.write(f"{C.row[k]} {C.col[k]} {C.data[k]:.17g}\n")
    return len(order)


def read_coo(path, n: Optional[int] = None) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    r, c, v = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2]
    size = n if n is not None else int(max(r.max(), c.max())) + 1
    return sp.csr_matrix((v, (r, c)), shape=(size, size))
