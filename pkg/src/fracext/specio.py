"""JSON operator specs.

A spec document has the shape::

    {"family": "weighted-elliptic",
     "grid": {"dim": 1, "extents": [[0, 1]], "points": 33, "boundary": "dirichlet-eliminated"},
     "coefficients": {"type": "constant", "matrix": [[1]]},
     "weight": {"type": "power", "alpha": 0.5, "center": [0.5], "eps": 1e-12}}

Coefficient types: ``identity``, ``constant`` (``matrix`` or, for
``subelliptic-diagonal``, ``vector``), ``grushin`` (``k``), ``skew-jump``
(``strength``, ``at``), ``bmo-perturbation`` (``amplitude``, ``frequency``) and
``samples`` (explicit per-lattice-node values).  Weight types: ``constant``
(``value``), ``power`` (``alpha``, ``center``, ``eps``), ``exp`` (``rate``,
``clip``) and ``samples``.  Errors carry the JSON path of the offending entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .assembly import (
    AssembledOperator,
    assemble_nondivergence,
    assemble_subelliptic_diagonal,
    assemble_weighted_elliptic,
)
from .grid import DEFAULT_EPS, CoeffField, GridError, GridSpec, WeightField


class SpecError(ValueError):
    """Malformed spec; ``path`` names the offending JSON location."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class OperatorSpec:
    family: str
    grid: GridSpec
    coefficients: CoeffField
    weight: Optional[WeightField]
    raw: dict

    def assemble(self) -> AssembledOperator:
        if self.family == "weighted-elliptic":
            return assemble_weighted_elliptic(self.grid, self.coefficients, self.weight)
        if self.family == "subelliptic-diagonal":
            return assemble_subelliptic_diagonal(self.grid, self.coefficients)
        return assemble_nondivergence(self.grid, self.coefficients)


def _get(d: dict, key: str, path: str, default: Any = ..., kind=None):
    if not isinstance(d, dict):
        raise SpecError(path, "expected an object")
    if key not in d:
        if default is ...:
            raise SpecError(f"{path}.{key}", "missing required field")
        return default
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise SpecError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SpecError(path, f"expected a number, got {type(v).__name__}")
    return float(v)


def _array(v, path: str, shape=None) -> np.ndarray:
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise SpecError(path, "expected a numeric array") from None
    if shape is not None and a.shape != tuple(shape):
        raise SpecError(path, f"expected shape {tuple(shape)}, got {a.shape}")
    return a


def parse_grid(d, path: str = "$.grid") -> GridSpec:
    if not isinstance(d, dict):
        raise SpecError(path, "expected an object")
    dim = _get(d, "dim", path, kind=int)
    ext = _get(d, "extents", path, kind=list)
    pts = _get(d, "points", path, kind=int)
    bd = _get(d, "boundary", path, "dirichlet-eliminated", kind=str)
    extents = []
    for i, e in enumerate(ext):
        if not isinstance(e, list) or len(e) != 2:
            raise SpecError(f"{path}.extents[{i}]", "expected [lo, hi]")
        extents.append((_num(e[0], f"{path}.extents[{i}][0]"), _num(e[1], f"{path}.extents[{i}][1]")))
    try:
        return GridSpec(dim, tuple(extents), pts, bd)
    except GridError as exc:
        raise SpecError(path, str(exc)) from None


def parse_weight(d, grid: GridSpec, path: str = "$.weight") -> WeightField:
    if d is None:
        return WeightField.constant(grid)
    kind = _get(d, "type", path, kind=str)
    try:
        if kind == "constant":
            return WeightField.constant(grid, _num(_get(d, "value", path, 1.0), f"{path}.value"))
        if kind == "power":
            alpha = _num(_get(d, "alpha", path), f"{path}.alpha")
            eps = _num(_get(d, "eps", path, DEFAULT_EPS), f"{path}.eps")
            c = _get(d, "center", path, None)
            c = None if c is None else _array(c, f"{path}.center", (grid.dim,))
            return WeightField.power(grid, alpha, eps, c)
        if kind == "exp":
            rate = _num(_get(d, "rate", path, 1.0), f"{path}.rate")
            clip = _get(d, "clip", path, None)
            lo, hi = (-np.inf, np.inf) if clip is None else _array(clip, f"{path}.clip", (2,))
            return WeightField.from_function(grid, lambda p: np.clip(np.exp(rate * p[:, 0]), lo, hi), 0.0)
        if kind == "samples":
            return WeightField(_array(_get(d, "values", path), f"{path}.values", (grid.lattice_size,)))
    except GridError as exc:
        raise SpecError(path, str(exc)) from None
    raise SpecError(f"{path}.type", f"unknown weight type {kind!r}")


def skew_jump(grid: GridSpec, strength: float, at: float = None):
    """``A = I + strength * sign(x_1 - at) J`` with ``J`` the rotation generator."""
    lo, hi = grid.extents[0]
    at = 0.5 * (lo + hi) if at is None else at
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])

    def f(p):
        s = np.sign(p[:, 0] - at)
        return np.eye(2)[None] + strength * s[:, None, None] * J[None]

    return f


def bmo_perturbation(grid: GridSpec, amplitude: float, frequency: float = 4.0):
    """``A = (1 + amplitude * sign(sin(2 pi f x_1))) I``: bounded with small mean oscillation."""

    def f(p):
        s = 1.0 + amplitude * np.sign(np.sin(2 * np.pi * frequency * p[:, 0]))
        return s[:, None, None] * np.eye(grid.dim)[None]

    return f


def parse_coefficients(d, grid: GridSpec, family: str, path: str = "$.coefficients") -> CoeffField:
    kind = _get(d, "type", path, kind=str)
    diag = family == "subelliptic-diagonal"
    ckind = {"weighted-elliptic": "matrix-A", "nondivergence": "nondiv-A"}.get(family, "diagonal-a")
    try:
        if kind == "identity":
            return CoeffField.diagonal(grid, np.ones(grid.dim)) if diag else CoeffField.matrix(grid, np.eye(grid.dim), ckind)
        if kind == "constant":
            if diag:
                return CoeffField.diagonal(grid, _array(_get(d, "vector", path), f"{path}.vector", (grid.dim,)))
            return CoeffField.matrix(grid, _array(_get(d, "matrix", path), f"{path}.matrix", (grid.dim, grid.dim)), ckind)
        if kind == "grushin":
            if not diag:
                raise SpecError(f"{path}.type", "grushin needs family subelliptic-diagonal")
            return CoeffField.grushin(grid, int(_num(_get(d, "k", path, 1), f"{path}.k")))
        if kind == "skew-jump":
            if grid.dim != 2 or diag:
                raise SpecError(f"{path}.type", "skew-jump needs a 2D matrix family")
            s = _num(_get(d, "strength", path, 10.0), f"{path}.strength")
            at = _get(d, "at", path, None)
            return CoeffField.matrix(grid, skew_jump(grid, s, None if at is None else _num(at, f"{path}.at")), ckind)
        if kind == "bmo-perturbation":
            if diag:
                raise SpecError(f"{path}.type", "bmo-perturbation needs a matrix family")
            amp = _num(_get(d, "amplitude", path, 0.1), f"{path}.amplitude")
            fr = _num(_get(d, "frequency", path, 4.0), f"{path}.frequency")
            return CoeffField.matrix(grid, bmo_perturbation(grid, amp, fr), ckind)
        if kind == "samples":
            shape = (grid.lattice_size, grid.dim) if diag else (grid.lattice_size, grid.dim, grid.dim)
            vals = _array(_get(d, "values", path), f"{path}.values", shape)
            return CoeffField(ckind, vals)
    except GridError as exc:
        raise SpecError(path, str(exc)) from None
    raise SpecError(f"{path}.type", f"unknown coefficient type {kind!r}")


FAMILIES = ("weighted-elliptic", "subelliptic-diagonal", "nondivergence")


def parse_spec(doc) -> OperatorSpec:
    if not isinstance(doc, dict):
        raise SpecError("$", "spec must be a JSON object")
    family = _get(doc, "family", "$", kind=str)
    if family not in FAMILIES:
        raise SpecError("$.family", f"unknown family {family!r}")
    grid = parse_grid(_get(doc, "grid", "$"))
    coef = parse_coefficients(_get(doc, "coefficients", "$", {"type": "identity"}), grid, family)
    weight = None
    if family == "weighted-elliptic":
        weight = parse_weight(_get(doc, "weight", "$", None), grid)
    elif doc.get("weight") is not None:
        raise SpecError("$.weight", f"family {family} takes no weight")
    return OperatorSpec(family, grid, coef, weight, doc)


def load_spec(path) -> OperatorSpec:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecError("$", f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_spec(doc)
