"""Command line: ``polystab synth|verify|sim|bench|bound``."""
from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import report as rpt
from .benchmark import format_table, load_manifest, run_bench
from .bernstein import pop_lower_bound
from .parsing import PolynomialSyntaxError, parse_polynomial
from .poly import Box
from .problem_file import ProblemFileError, load_problem
from .synthesis import LpFailure, Status, SynthesisError, synthesize
from .verify import check_certificate, export_field_grid, simulate, write_field_csv, write_trajectory_csv

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_USAGE = 2  # argparse
EXIT_ITER_LIMIT = 3
EXIT_FAILED_PROGRESS = 4
EXIT_NUMERICAL = 5
EXIT_SYNTHESIS = 6
EXIT_NO_INVARIANCE = 7
EXIT_VERIFY_FAILED = 8

_STATUS_EXIT = {
    Status.ITER_LIMIT: EXIT_ITER_LIMIT,
    Status.FAILED_PROGRESS: EXIT_FAILED_PROGRESS,
    Status.STABILIZED_NO_INVARIANCE: EXIT_NO_INVARIANCE,
}


def _pair(text: str) -> tuple[float, float]:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if len(parts) == 1:
        v = abs(float(parts[0]))
        return (-v, v)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'max' or 'lo,hi', got {text!r}")
    return (float(parts[0]), float(parts[1]))


def _vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in re.split(r"[,\s]+", text.strip()) if v])


def _overrides(args) -> dict:
    o = {
        "epsilon": getattr(args, "eps", None),
        "tol": getattr(args, "tol", None),
        "max_iter": getattr(args, "max_iter", None),
        "c_bounds": getattr(args, "cmax", None),
        "theta_bounds": getattr(args, "thetamax", None),
        "degree_elevate": getattr(args, "degree_elevate", None),
        "facet_margin": getattr(args, "facet_margin", None),
        "lp_method": getattr(args, "lp_solver", None),
    }
    if getattr(args, "hybrid", False):
        o["hybrid"] = True
    if getattr(args, "drop_invariance", False):
        o["drop_invariance"] = True
    split = getattr(args, "split", None)
    if split is not None:
        o["split"] = split
    return {k: v for k, v in o.items() if v is not None}


def _add_synthesis_flags(p):
    p.add_argument("--eps", type=float, help="margin epsilon in V >= eps|x|^2 and -V' >= eps|x|^2")
    p.add_argument("--tol", type=float, help="stop when the controller-step slack is at most this")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--cmax", type=_pair, help="bounds on V coefficients: 'M' for [-M, M] or 'lo,hi'")
    p.add_argument("--thetamax", type=_pair, help="bounds on gains: 'M' or 'lo,hi'")
    p.add_argument("--degree-elevate", type=int, dest="degree_elevate")
    p.add_argument("--facet-margin", type=float, dest="facet_margin")
    p.add_argument("--hybrid", action="store_true", help="one gain vector per box of the zero split")
    p.add_argument("--drop-invariance", action="store_true", dest="drop_invariance")
    split = p.add_mutually_exclusive_group()
    split.add_argument("--split", action="store_const", const=True, dest="split")
    split.add_argument("--no-split", action="store_const", const=False, dest="split")
    p.add_argument("--lp-solver", choices=["highs", "simplex"], dest="lp_solver")


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args) -> int:
    spec = load_problem(args.problem, _overrides(args))
    problem = spec.problem
    try:
        result = synthesize(problem)
    except LpFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SynthesisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    ver = check_certificate(problem, result.c_star, result.theta_star, grid=args.grid,
                            derivative_tol=max(problem.options.tol, 1e-6))
    doc = rpt.run_report(problem, result, ver, source=str(args.problem), name=spec.name)
    _emit(rpt.dumps(doc), args.output)
    print(f"{result.status.value}: {result.iterations} iteration(s), final slack {result.final_slack:.3g}",
          file=sys.stderr)
    if result.status is Status.STABILIZED:
        return EXIT_OK
    if result.status is Status.STABILIZED_NO_INVARIANCE and args.drop_invariance:
        return EXIT_OK
    return _STATUS_EXIT[result.status]


def _certificate_from(args, spec):
    """``(V or c, theta)`` from a run report or from the file's published certificate."""
    if args.report:
        doc = rpt.loads(Path(args.report).read_text())
        c = np.array(doc["c_star"], dtype=float)
        thetas = [np.array(t, dtype=float) for t in doc["theta_star"]]
        return c, thetas if len(thetas) > 1 else thetas[0]
    if spec.certificate is None:
        raise ProblemFileError("no [certificate] section; pass --report", str(args.problem))
    th = spec.certificate.theta
    return spec.certificate.V, th if len(th) > 1 else th[0]


def cmd_verify(args) -> int:
    spec = load_problem(args.problem)
    V, theta = _certificate_from(args, spec)
    ver = check_certificate(spec.problem, V, theta, grid=args.grid, exclusion_radius=args.exclusion,
                            derivative_tol=args.tol)
    _emit(rpt.dumps(ver.summary()), args.output)
    return EXIT_OK if ver.passed else EXIT_VERIFY_FAILED


def cmd_sim(args) -> int:
    spec = load_problem(args.problem)
    problem = spec.problem
    if args.open_loop:
        theta = np.zeros(problem.n_gains)
    else:
        _, theta = _certificate_from(args, spec)
    if args.field_grid:
        rows = export_field_grid(problem, theta, args.field_grid)
        write_field_csv(rows, problem.n, args.output or sys.stdout)
        return EXIT_OK
    if args.x0 is None:
        print("error: --x0 is required unless --field-grid is given", file=sys.stderr)
        return EXIT_INPUT
    traj = simulate(problem, theta, args.x0, dt=args.dt, horizon=args.horizon)
    write_trajectory_csv(traj, args.output or sys.stdout, problem.n)
    if traj.box_exit_time is not None:
        print(f"trajectory left the region at t = {traj.box_exit_time:.6g}", file=sys.stderr)
    if traj.aborted:
        print("integration stopped: state became non-finite", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    manifest = load_manifest(args.manifest)
    ids = None
    if args.ids:
        ids = {int(v) for v in args.ids.split(",") if v.strip()}
    rows = run_bench(manifest, ids=ids, overrides=_overrides(args))
    print(format_table(rows))
    if args.json:
        Path(args.json).write_text(rpt.dumps({"assumption": manifest.get("assumption", ""), "rows": rows}))
    return EXIT_OK


def _variables_in(text: str) -> list[str]:
    seen = []
    for name in re.findall(r"[A-Za-z_][A-Za-z_0-9]*", text):
        if name not in seen:
            seen.append(name)
    return seen or ["x"]


def cmd_bound(args) -> int:
    names = [v.strip() for v in args.vars.split(",")] if args.vars else _variables_in(args.polynomial)
    try:
        p = parse_polynomial(args.polynomial, names)
    except PolynomialSyntaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    boxes = args.box or ["0,1"]
    if len(boxes) == 1:
        boxes = boxes * len(names)
    if len(boxes) != len(names):
        print(f"error: {len(boxes)} --box intervals for {len(names)} variables", file=sys.stderr)
        return EXIT_INPUT
    lo, hi = zip(*(_pair(b) if "," in b else (0.0, float(b)) for b in boxes))
    try:
        box = Box(tuple(lo), tuple(hi))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    delta = None
    if args.degree:
        delta = [int(v) for v in args.degree.split(",")]
        if len(delta) == 1:
            delta = delta * len(names)
    print(format(pop_lower_bound(p, box, delta), ".17g"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polystab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a controller and Lyapunov function")
    p.add_argument("problem")
    _add_synthesis_flags(p)
    p.add_argument("--grid", type=int, help="verification grid points per axis")
    p.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="check a certificate on a grid and by fresh relaxation LPs")
    p.add_argument("problem")
    p.add_argument("--report", help="run report with c_star/theta_star; default: the file's [certificate]")
    p.add_argument("--grid", type=int)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--exclusion", type=float, default=0.0, help="origin radius excluded from strictness")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sim", help="simulate the closed loop (RK4) and write CSV")
    p.add_argument("problem")
    p.add_argument("--report")
    p.add_argument("--x0", type=_vector)
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--open-loop", action="store_true", dest="open_loop")
    p.add_argument("--field-grid", type=int, dest="field_grid", help="write the vector field on an N^n grid")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("bench", help="run the benchmark manifest")
    p.add_argument("manifest", nargs="?", help="default: the bundled manifest")
    p.add_argument("--ids", help="comma separated ids to run")
    p.add_argument("--json", help="also write the table as JSON")
    _add_synthesis_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bound", help="Bernstein LP lower bound of a polynomial on a box")
    p.add_argument("polynomial")
    p.add_argument("--vars", help="ordered variable names; default: order of appearance")
    p.add_argument("--box", action="append", help="'lo,hi' per variable (repeat), or one for all; write --box=-1,1 for negative bounds")
    p.add_argument("--degree", help="Bernstein degree per variable")
    p.set_defaults(func=cmd_bound)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ProblemFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
