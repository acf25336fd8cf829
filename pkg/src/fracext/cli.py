"""Command line front end: ``fracext {assemble,fracpow,extend,verify}``.

Exit codes: 0 all checks passed, 1 at least one check failed, 2 configuration
or I/O error.
"""

from __future__ import annotations

import argparse
import os
import platform
import sys
import time
from typing import Optional

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .assembly import export_coo
from .calculus import CalculusError, frac_power_apply_balakrishnan, frac_power_apply_spectral, spectrum
from .extension import (
    ExtensionError,
    bvp_refinement_nodes,
    extend_poisson,
    extend_subordination,
    geometric_y_grid,
)
from .extension import solve_extension_bvp
from .grid import GridError
from .reports import SCHEMA_VERSION, VerificationReport, check_ge, check_le, check_true, dumps, write_report_csv
from .specio import SpecError, load_spec
from .suites import DEFAULT_TOL, SUITES, SuiteError, ode_order_check, run_suite, sample_state
from .verify import VerifyError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    pass


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _threads(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threads must be an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracext", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fracext {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("assemble", "assemble an operator spec and export it in coordinate format"),
        ("fracpow", "apply T^sigma by the Balakrishnan and spectral routes"),
        ("extend", "build the extension profile and export it as CSV"),
        ("verify", "run a named verification suite"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--spec", help="operator spec (JSON)")
        sp.add_argument("--sigma", type=float, help="fractional order")
        sp.add_argument("--suite", choices=SUITES if name == "verify" else None, help="suite name (verify only)")
        sp.add_argument("--out", default="fracext-out", help="output directory (FRACEXT_OUT overrides)")
        sp.add_argument("--seed", type=_seed, default=0, help="64-bit seed")
        sp.add_argument("--threads", type=_threads, default=None, help="cap on BLAS worker threads")
        sp.add_argument("--tol", action="append", default=[], metavar="NAME=FLOAT", help="tolerance override")
    return p


def parse_tolerances(items) -> dict:
    out = {}
    for item in items:
        name, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--tol expects NAME=FLOAT, got {item!r}")
        if name not in DEFAULT_TOL:
            raise ConfigError(f"unknown tolerance {name!r}; known: {', '.join(sorted(DEFAULT_TOL))}")
        try:
            out[name] = float(val)
        except ValueError:
            raise ConfigError(f"tolerance {name} needs a number, got {val!r}") from None
    return out


def _need_sigma(sigma: Optional[float], lo_open: bool = True, hi_incl: bool = False) -> float:
    if sigma is None:
        raise ConfigError("--sigma is required")
    if not (0 < sigma < 1 or (hi_incl and sigma == 1)):
        raise ConfigError(f"sigma={sigma} outside {'(0, 1]' if hi_incl else '(0, 1)'}")
    return sigma


def _need_spec(path: Optional[str]):
    if path is None:
        raise ConfigError("--spec is required")
    return load_spec(path)


# ---------------------------------------------------------------- commands


def cmd_assemble(args, out_dir: str, tol: dict) -> tuple:
    spec = _need_spec(args.spec)
    T = spec.assemble()
    nnz = export_coo(T, os.path.join(out_dir, "operator.coo"))
    S = T.stiffness().toarray()
    H = 0.5 * (S + S.T)
    lam_min = float(np.linalg.eigvalsh(H)[0]) if T.n <= 4096 else float("nan")
    scale = max(float(np.abs(S).max()), 1e-300)
    checks = [
        check_ge("weighted form nonnegative (min eigenvalue of symmetric part / max entry)", lam_min / scale, -1e-12,
                 "discrete bilinear form E(u, u) >= 0"),
    ]
    if T.family == "weighted-elliptic" and spec.coefficients.symmetric:
        checks.append(check_le("stiffness symmetric", float(np.abs(S - S.T).max()) / scale, 1e-13,
                               "self-adjointness in the weighted inner product"))
    info = {
        "n": T.n,
        "nnz": nnz,
        "family": T.family,
        "symmetric": T.symmetric,
        "sector_angle_hint": T.sector_angle_hint,
        "lambda": T.lam,
        "Lambda": T.Lam,
        "grid": spec.grid.to_dict(),
        "files": ["operator.coo"],
    }
    return checks, info


def cmd_fracpow(args, out_dir: str, tol: dict) -> tuple:
    spec = _need_spec(args.spec)
    sigma = _need_sigma(args.sigma)
    T = spec.assemble()
    x0 = sample_state(T, args.seed)
    bal = frac_power_apply_balakrishnan(T, sigma, x0)
    half = frac_power_apply_balakrishnan(T, 0.5, frac_power_apply_balakrishnan(T, 0.5, x0))
    tx = T.matrix @ x0
    checks = [
        check_le("self-composition (T^1/2)^2 x = T x", float(np.linalg.norm(half - tx) / np.linalg.norm(tx)), 1e-6,
                 "fractional power composition law"),
    ]
    spec_route = None
    if not spectrum(T).defective:
        spec_route = frac_power_apply_spectral(T, sigma, x0)
        checks.append(check_le("Balakrishnan vs spectral route", float(np.linalg.norm(bal - spec_route) / np.linalg.norm(spec_route)),
                               1e-6, "Balakrishnan integral vs eigen-decomposition"))
    path = os.path.join(out_dir, "fracpow.csv")
    with open(path, "w") as fh:
        fh.write("index,x0,balakrishnan,spectral\n")
        for i in range(T.n):
            sv = "" if spec_route is None else f"{spec_route[i]:.17g}"
            fh.write(f"{i},{x0[i]:.17g},{bal[i]:.17g},{sv}\n")
    return checks, {"n": T.n, "sigma": sigma, "files": ["fracpow.csv"]}


def cmd_extend(args, out_dir: str, tol: dict) -> tuple:
    spec = _need_spec(args.spec)
    sigma = _need_sigma(args.sigma)
    T = spec.assemble()
    x0 = sample_state(T, args.seed)
    y = geometric_y_grid(T)
    P = extend_poisson(T, sigma, x0, y)
    Sb = extend_subordination(T, sigma, x0, y)
    P.to_csv(os.path.join(out_dir, "profile.csv"))
    files = ["profile.csv"]
    diff = max(T.wnorm(a - b) for a, b in zip(P.states, Sb.states)) / T.wnorm(x0)
    order, c, f = ode_order_check(T, sigma, x0)
    checks = [
        check_le("Poisson vs subordination profiles", diff, tol.get("poisson.routes", DEFAULT_TOL["poisson.routes"]),
                 "Poisson formula vs defining extension formula"),
        check_ge("extension ODE residual order", order, tol.get("ode.order", DEFAULT_TOL["ode.order"]),
                 "extension ODE -Tx + ((1-2s)/y)x' + x'' = 0", [{"coarse": c, "fine": f}]),
    ]
    if spec.family == "weighted-elliptic":
        F = solve_extension_bvp(spec.grid, spec.coefficients, spec.weight, sigma, x0,
                                y_nodes=bvp_refinement_nodes(T, sigma, 0))
        F.to_csv(os.path.join(out_dir, "bvp.csv"))
        files.append("bvp.csv")
        checks.append(check_le("extension BVP solver residual", F.solver_residual, 1e-8,
                               "weighted extension problem (linear solve)"))
    return checks, {"n": T.n, "sigma": sigma, "y_nodes": len(y), "files": files}


def cmd_verify(args, out_dir: str, tol: dict) -> tuple:
    if args.suite is None:
        raise ConfigError("--suite is required")
    spec = load_spec(args.spec) if args.spec else None
    reports = run_suite(args.suite, spec, args.sigma, args.seed, tol, out_dir)
    return reports, {"suite": args.suite, "default_spec": spec is None}


COMMANDS = {"assemble": cmd_assemble, "fracpow": cmd_fracpow, "extend": cmd_extend, "verify": cmd_verify}


def versions() -> dict:
    return {
        "fracext": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def run(args) -> int:
    t0 = time.perf_counter()
    out_dir = os.environ.get("FRACEXT_OUT") or args.out
    try:
        tol = parse_tolerances(args.tol)
        os.makedirs(out_dir, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise ConfigError(f"output directory {out_dir!r} is not writable")
        with threadpool_limits(limits=args.threads):
            try:
                checks, info = COMMANDS[args.command](args, out_dir, tol)
            except (CalculusError, ExtensionError) as exc:
                checks = [VerificationReport("execution", str(exc), None, False, [], "numerical routine", "n/a")]
                info = {"error": str(exc)}
    except (ConfigError, SpecError, SuiteError, VerifyError, GridError, OSError) as exc:
        print(f"fracext: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    passed = all(c.passed for c in checks)
    tolerances = dict(DEFAULT_TOL)
    tolerances.update(tol)
    doc = {
        "schema": SCHEMA_VERSION,
        "command": args.command,
        "suite": args.suite,
        "sigma": args.sigma,
        "seed": args.seed,
        "spec": None if not args.spec else os.path.basename(args.spec),
        "tolerances": tolerances,
        "info": info,
        "checks": [c.to_dict() for c in checks],
        "passed": passed,
        "versions": versions(),
        "timings": {"total_seconds": round(time.perf_counter() - t0, 6), "threads": args.threads},
    }
    try:
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(dumps(doc))
        write_report_csv(os.path.join(out_dir, "checks.csv"), checks)
    except OSError as exc:
        print(f"fracext: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.check}: {c.value} {c.comparison} {c.tolerance}")
    return EXIT_OK if passed else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, 0 for --help/--version
        return int(exc.code or 0)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
