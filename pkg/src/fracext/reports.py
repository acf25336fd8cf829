"""Verification reports and their serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

SCHEMA_VERSION = 1


def jsonable(x: Any) -> Any:
    """Plain JSON types; non-finite floats become strings so the output stays valid JSON."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, complex):
        return [x.real, x.imag]
    if x is None or isinstance(x, str):
        return x
    if hasattr(x, "to_dict"):
        return jsonable(x.to_dict())
    return str(x)


@dataclass
class VerificationReport:
    """One named check: measured value against a tolerance, with a refinement/evidence trace."""

    check: str
    value: Any
    tolerance: Any
    passed: bool
    trace: list = field(default_factory=list)
    anchor: str = ""
    comparison: str = "<="

    def to_dict(self) -> dict:
        return jsonable(
            {
                "check": self.check,
                "anchor": self.anchor,
                "value": self.value,
                "tolerance": self.tolerance,
                "comparison": self.comparison,
                "passed": bool(self.passed),
                "trace": self.trace,
            }
        )


def check_le(name: str, value: float, tol: float, anchor: str, trace=None) -> VerificationReport:
    ok = bool(np.isfinite(value) and value <= tol)
    return VerificationReport(name, float(value), float(tol), ok, list(trace or []), anchor, "<=")


def check_ge(name: str, value: float, tol: float, anchor: str, trace=None) -> VerificationReport:
    ok = bool(np.isfinite(value) and value >= tol)
    return VerificationReport(name, float(value), float(tol), ok, list(trace or []), anchor, ">=")


def check_true(name: str, value: bool, anchor: str, trace=None, measured: Optional[Any] = None) -> VerificationReport:
    return VerificationReport(
        name, bool(value) if measured is None else measured, True, bool(value), list(trace or []), anchor, "=="
    )


def dumps(doc: dict) -> str:
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report_csv(path, reports: list) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["check", "anchor", "value", "comparison", "tolerance", "passed"])
        for r in reports:
            d = r.to_dict()
            val = d["value"] if not isinstance(d["value"], (list, dict)) else json.dumps(d["value"], sort_keys=True)
            wr.writerow([d["check"], d["anchor"], val, d["comparison"], d["tolerance"], d["passed"]])
