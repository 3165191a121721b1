"""Run reports as deterministic JSON.

Floats are written with 17 significant digits so a report round-trips
exactly; non-finite values become the strings ``"inf"``, ``"-inf"`` and
``"nan"``.  Keys named in ``TIMING_KEYS`` hold wall-clock data and are the only
fields that differ between identical runs.
"""
from __future__ import annotations

import json
import math
from typing import Any

import numpy as np

from .poly import Polynomial
from .synthesis import SynthesisProblem, SynthesisResult
from .verify import VerificationReport

TIMING_KEYS = frozenset({"seconds", "wall_clock", "iteration_seconds"})
FORMAT_VERSION = 1


def _number(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    if v == 0.0:
        # keep the sign of zero so the round-trip is exact
        return "-0.0" if math.copysign(1.0, v) < 0 else "0.0"
    if v == int(v) and abs(v) < 2 ** 53:
        return f"{int(v)}.0"
    return format(v, ".17g")


def dumps(obj: Any, indent: int = 2) -> str:
    return _dump(obj, 0, indent) + "\n"


def _dump(obj, level, indent) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_dump(v, level + 1, indent)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_dump(v, level + 1, indent) for v in obj) + "]"
        items = [pad + _dump(v, level + 1, indent) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _number(float(obj))
    return json.dumps(str(obj))


def _restore(obj):
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def loads(text: str) -> Any:
    return _restore(json.loads(text))


def strip_timing(obj):
    """Copy of a report with every timing field removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def run_report(problem: SynthesisProblem, result: SynthesisResult, verification: VerificationReport | None,
               source: str = "", name: str = "") -> dict:
    names = list(problem.variables)
    V = problem.lyapunov(result.c_star) if result.c_star is not None else None
    doc = {
        "format": FORMAT_VERSION,
        "problem": {"source": source, "name": name, "variables": names,
                    "template": [Polynomial.monomial(m).to_string(names) for m in problem.template]},
        "options": _options(problem),
        "status": result.status.value,
        "invariance": result.invariance,
        "message": result.message,
        "iterations": result.iterations,
        "final_slack": result.final_slack,
        "slack_trace": list(result.slack_trace),
        "c_star": [] if result.c_star is None else list(result.c_star),
        "lyapunov": "" if V is None else V.to_string(names),
        "theta_star": [list(t) for t in result.theta_star],
        "boxes": [{"lower": list(b.lower), "upper": list(b.upper)} for b in result.boxes],
        "steps": [{"kind": s.kind, "slack": s.slack, "seconds": s.seconds} for s in result.steps],
    }
    if verification is not None:
        doc["verification"] = verification.summary()
    return doc


def _options(problem: SynthesisProblem) -> dict:
    o = problem.options
    return {
        "epsilon": o.epsilon, "tol": o.tol, "max_iter": o.max_iter, "progress_tol": o.progress_tol,
        "c_bounds": list(o.c_bounds), "theta_bounds": list(o.theta_bounds),
        "c_lower": {str(k): v for k, v in sorted(o.c_lower.items())},
        "c_upper": {str(k): v for k, v in sorted(o.c_upper.items())},
        "hybrid": o.hybrid, "split": o.split, "drop_invariance": o.drop_invariance,
        "invariance_fallback": o.invariance_fallback, "facet_margin": o.facet_margin,
        "degree_elevate": o.degree_elevate, "lp_method": o.lp_method,
    }
