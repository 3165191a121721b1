"""Benchmark harness: synthesis plus published-certificate checks per manifest entry."""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .problem_file import load_problem
from .synthesis import Status, SynthesisError, synthesize
from .verify import check_certificate

STAB_THRESHOLD = 1e-5


def bundled_manifest() -> Path:
    return Path(str(resources.files("polystab") / "data" / "bench" / "manifest.json"))


def load_manifest(path=None) -> dict:
    path = Path(path) if path is not None else bundled_manifest()
    doc = json.loads(path.read_text())
    doc.setdefault("entries", [])
    base = path.parent
    for e in doc["entries"]:
        e["path"] = str((base / e["file"]).resolve())
    return doc


def run_entry(entry: dict, overrides: dict | None = None) -> dict:
    """One table row; failures come back as data, never as exceptions."""
    row = {"id": entry.get("id"), "file": entry.get("file"), "region": entry.get("region"),
           "inputs": entry.get("inputs")}
    t0 = time.perf_counter()
    try:
        spec = load_problem(entry["path"], overrides)
    except Exception as exc:  # noqa: BLE001 - isolate per-entry failures
        row.update(status="Error", error=str(exc), stab=False, inv=False, iterations=0,
                   final_slack=float("inf"), seconds=time.perf_counter() - t0)
        return row
    problem = spec.problem
    try:
        result = synthesize(problem)
        ver = check_certificate(problem, result.c_star, result.theta_star)
        stab = result.stabilized and result.final_slack <= STAB_THRESHOLD
        inv = (result.status is Status.STABILIZED and result.invariance
               and ver.facets_nonpositive(problem.options.tol))
        row.update(status=result.status.value, stab=bool(stab), inv=bool(inv), iterations=result.iterations,
                   final_slack=result.final_slack, message=result.message,
                   synthesized={"derivative_max": ver.derivative_max, "lyapunov_ok": ver.lyapunov_ok,
                                "certificate_ok": ver.certificate_ok, "facet_max_flux": ver.facet_max_flux},
                   c_star=list(result.c_star), theta_star=[list(t) for t in result.theta_star])
    except SynthesisError as exc:
        row.update(status=type(exc).__name__, error=str(exc), stab=False, inv=False, iterations=0,
                   final_slack=float("inf"))
    if spec.certificate is not None:
        cert = spec.certificate
        pv = check_certificate(problem, cert.V, cert.theta, relaxation=False)
        row["published"] = {
            "derivative_max": pv.derivative_max,
            "derivative_strict": pv.derivative_strict,
            "derivative_ok": pv.derivative_ok,
            "lyapunov_min_off_origin": pv.lyapunov_min_off_origin,
            "lyapunov_ok": pv.lyapunov_ok,
            "passed": pv.passed,
        }
    row["expected"] = {"stab": entry.get("assert_stab", False), "inv": entry.get("assert_inv", False),
                       "reference": entry.get("published", {})}
    row["seconds"] = time.perf_counter() - t0
    return row


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("POLYSTAB_THREADS", "1")))
    except ValueError:
        return 1


def run_bench(manifest: dict, ids=None, overrides: dict | None = None, workers: int | None = None) -> list[dict]:
    entries = [e for e in manifest["entries"] if ids is None or e.get("id") in ids]
    workers = workers or _worker_count()
    if workers <= 1 or len(entries) <= 1:
        return [run_entry(e, overrides) for e in entries]
    with ProcessPoolExecutor(max_workers=min(workers, len(entries))) as pool:
        # map keeps manifest order regardless of completion order
        return list(pool.map(run_entry, entries, [overrides] * len(entries)))


def _mark(flag) -> str:
    return "yes" if flag else "no"


def format_table(rows: list[dict]) -> str:
    head = f"{'Id':>3}  {'Status':<22} {'Stab':<4} {'Inv':<4} {'Iter':>4}  {'slack':>10}  {'pub dV max':>11}  {'pub ok':<6}"
    lines = [head, "-" * len(head)]
    for r in rows:
        pub = r.get("published")
        lines.append(
            f"{r['id']!s:>3}  {r['status']:<22} {_mark(r['stab']):<4} {_mark(r['inv']):<4} {r['iterations']:>4}  "
            f"{r['final_slack']:>10.3g}  "
            f"{(pub['derivative_max'] if pub else float('nan')):>11.3g}  {(_mark(pub['passed']) if pub else '-'):<6}"
        )
    return "\n".join(lines)
