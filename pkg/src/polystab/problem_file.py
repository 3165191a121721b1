"""Reader and writer for ``.prob`` problem files.

A problem file is a list of bracketed sections.  ``#`` starts a comment.

    [variables]     x1, x2
    [dynamics]      one line per state: ``x1' = <poly>`` (the prefix is optional)
    [dynamics 3]    optional drift on box 3 of the zero decomposition (hybrid)
    [control]       one row of g per state, comma separated; default: none
    [outputs]       ``y1 = <poly in states>`` lines; default: y = x
    [structure]     one row of H per input, comma separated polynomials in y
    [region]        ``x1 = lo, hi`` for every state
    [inputs]        ``u1 = lo, hi`` intervals or ``halfspace = a1, .., ap <= b``
    [template]      comma separated monomials and/or ``auto: degree D``
    [coefficient_bounds]  ``<monomial> >= v`` or ``<monomial> <= v``
    [options]       ``key = value``
    [certificate]   published pair: ``theta = ..`` (or ``theta 2 = ..``) and ``V = <poly>``

Errors carry the file name and line number.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .parsing import PolynomialSyntaxError, parse_polynomial
from .poly import Box, MultiIndex, PolyMatrix, Polynomial, grlex_key
from .synthesis import SynthesisOptions, SynthesisProblem, zero_split


class ProblemFileError(ValueError):
    def __init__(self, message: str, source: str = "<string>", line: int | None = None):
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass
class PublishedCertificate:
    V: Polynomial
    theta: list[np.ndarray]


@dataclass
class ProblemSpec:
    problem: SynthesisProblem
    name: str = ""
    certificate: PublishedCertificate | None = None
    notes: list[str] = field(default_factory=list)


_OPTION_TYPES = {
    "epsilon": float,
    "tol": float,
    "max_iter": int,
    "progress_tol": "optfloat",
    "hybrid": bool,
    "split": bool,
    "drop_invariance": bool,
    "invariance_fallback": bool,
    "facet_margin": float,
    "degree_elevate": int,
    "per_row_derivative": bool,
    "lp_method": str,
    "c_bounds": "pair",
    "theta_bounds": "pair",
}

_SECTION = re.compile(r"^\[\s*([a-z_]+)(?:\s+(\d+))?\s*\]$")


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _numbers(text, count=None):
    vals = [float(v) for v in text.split(",") if v.strip()]
    if count is not None and len(vals) != count:
        raise ValueError(f"expected {count} numbers, got {len(vals)}")
    return vals


def _monomial_exponent(p: Polynomial) -> MultiIndex:
    items = list(p.items())
    if len(items) != 1 or items[0][1] != 1.0:
        raise ValueError(f"{p} is not a monic monomial")
    return items[0][0]


def all_monomials(dim: int, degree: int) -> list[MultiIndex]:
    out = [a for a in product(range(degree + 1), repeat=dim) if 1 <= sum(a) <= degree]
    return sorted(out, key=grlex_key)


def _split_sections(text: str, source: str):
    sections: list[tuple[str, int | None, int, list[tuple[int, str]]]] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = (m.group(1), int(m.group(2)) if m.group(2) else None, lineno, [])
            sections.append(current)
            continue
        if line.startswith("["):
            raise ProblemFileError(f"malformed section header {line!r}", source, lineno)
        if current is None:
            raise ProblemFileError("content before the first section header", source, lineno)
        current[3].append((lineno, line))
    return sections


def parse_problem(text: str, source: str = "<string>", overrides: dict | None = None) -> ProblemSpec:
    sections = _split_sections(text, source)
    by_name: dict[str, list] = {}
    for name, idx, lineno, lines in sections:
        by_name.setdefault(name, []).append((idx, lineno, lines))
    known = {"variables", "dynamics", "control", "outputs", "structure", "region", "inputs", "template",
             "coefficient_bounds", "options", "certificate", "name"}
    for name, entries in by_name.items():
        if name not in known:
            raise ProblemFileError(f"unknown section [{name}]", source, entries[0][1])

    def section(name, required=True):
        entries = [e for e in by_name.get(name, []) if e[0] is None]
        if not entries:
            if required:
                raise ProblemFileError(f"missing section [{name}]", source)
            return None, []
        if len(entries) > 1:
            raise ProblemFileError(f"section [{name}] appears twice", source, entries[1][1])
        return entries[0][1], entries[0][2]

    def poly(text_, names, lineno):
        try:
            return parse_polynomial(text_, names)
        except PolynomialSyntaxError as exc:
            raise ProblemFileError(str(exc), source, lineno) from None

    def fail(msg, lineno):
        raise ProblemFileError(msg, source, lineno)

    # variables
    hdr, lines = section("variables")
    names = [v.strip() for _, l in lines for v in l.split(",") if v.strip()]
    if not names:
        fail("no variables declared", hdr)
    for v in names:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", v):
            fail(f"invalid variable name {v!r}", hdr)
    n = len(names)

    _, lines = section("name", required=False)
    title = " ".join(l for _, l in lines)

    def drift(lines, hdr):
        f = []
        for lineno, l in lines:
            m = re.match(r"^([A-Za-z_][A-Za-z_0-9]*)'\s*=\s*(.*)$", l)
            if m:
                if len(f) >= n:
                    fail("more dynamics equations than states", lineno)
                if m.group(1) != names[len(f)]:
                    fail(f"expected the equation for {names[len(f)]}", lineno)
                l = m.group(2)
            f.append(poly(l, names, lineno))
        if len(f) != n:
            fail(f"{len(f)} dynamics equations for {n} states", hdr)
        return tuple(f)

    hdr, lines = section("dynamics")
    f = drift(lines, hdr)
    box_f = {}
    for idx, lineno, lines in by_name.get("dynamics", []):
        if idx is not None:
            box_f[idx] = drift(lines, lineno)

    hdr, lines = section("control", required=False)
    g_rows = [[poly(e, names, lineno) for e in l.split(",")] for lineno, l in lines]
    if g_rows:
        if len(g_rows) != n:
            fail(f"control matrix has {len(g_rows)} rows, expected {n}", hdr)
        if len({len(r) for r in g_rows}) != 1:
            fail("control matrix rows differ in length", hdr)
        g = PolyMatrix(g_rows, n)
    else:
        g = PolyMatrix.zeros(n, 1, n)
    p = g.shape[1]

    hdr, lines = section("outputs", required=False)
    if lines:
        out_names, h = [], []
        for lineno, l in lines:
            m = re.match(r"^([A-Za-z_][A-Za-z_0-9]*)\s*=\s*(.+)$", l)
            if not m:
                fail("output lines must read 'name = polynomial'", lineno)
            out_names.append(m.group(1))
            h.append(poly(m.group(2), names, lineno))
    else:
        out_names = list(names)
        h = [Polynomial.variable(n, k) for k in range(n)]

    hdr, lines = section("structure", required=g_rows != [])
    if lines:
        H_rows = [[poly(e, out_names, lineno) for e in l.split(",")] for lineno, l in lines]
        if len(H_rows) != p:
            fail(f"structure matrix has {len(H_rows)} rows, expected one per input ({p})", hdr)
        if len({len(r) for r in H_rows}) != 1:
            fail("structure matrix rows differ in length", hdr)
        H = PolyMatrix(H_rows, len(out_names))
    else:
        H = PolyMatrix.zeros(p, 1, len(out_names))

    hdr, lines = section("region")
    bounds = {}
    for lineno, l in lines:
        m = re.match(r"^([A-Za-z_][A-Za-z_0-9]*)\s*=\s*(.+)$", l)
        if not m or m.group(1) not in names:
            fail("region lines must read '<state> = lo, hi'", lineno)
        try:
            lo, hi = _numbers(m.group(2), 2)
        except ValueError as exc:
            fail(str(exc), lineno)
        k = names.index(m.group(1))
        if not lo < hi:
            fail(f"empty region axis {k + 1}", lineno)
        bounds[k] = (lo, hi)
    if len(bounds) != n:
        fail("region must bound every state", hdr)
    region = Box(tuple(bounds[k][0] for k in range(n)), tuple(bounds[k][1] for k in range(n)))

    hdr, lines = section("inputs", required=False)
    inputs = []
    for lineno, l in lines:
        m = re.match(r"^u(\d+)\s*=\s*(.+)$", l)
        try:
            if m:
                j = int(m.group(1)) - 1
                if not 0 <= j < p:
                    fail(f"input u{j + 1} does not exist (p = {p})", lineno)
                lo, hi = _numbers(m.group(2), 2)
                e = [0.0] * p
                e[j] = 1.0
                inputs.append((tuple(e), hi))
                e = [0.0] * p
                e[j] = -1.0
                inputs.append((tuple(e), -lo))
                continue
            m = re.match(r"^halfspace\s*=\s*(.+)<=(.+)$", l)
            if m:
                inputs.append((tuple(_numbers(m.group(1), p)), float(m.group(2))))
                continue
        except ValueError as exc:
            fail(str(exc), lineno)
        fail("input lines read 'u<k> = lo, hi' or 'halfspace = a1, .., ap <= b'", lineno)

    hdr, lines = section("template")
    template: list[MultiIndex] = []
    for lineno, l in lines:
        m = re.match(r"^auto\s*:\s*degree\s+(\d+)$", l)
        if m:
            template.extend(all_monomials(n, int(m.group(1))))
            continue
        for e in l.split(","):
            try:
                template.append(_monomial_exponent(poly(e.strip(), names, lineno)))
            except ValueError as exc:
                if isinstance(exc, ProblemFileError):
                    raise
                fail(str(exc), lineno)
    seen = []
    for a in template:
        if a not in seen:
            seen.append(a)
    template = seen

    opts: dict = {}
    hdr, lines = section("options", required=False)
    for lineno, l in lines:
        if "=" not in l:
            fail("option lines read 'key = value'", lineno)
        key, value = (s.strip() for s in l.split("=", 1))
        kind = _OPTION_TYPES.get(key)
        if kind is None:
            fail(f"unknown option {key!r}", lineno)
        try:
            if kind == "pair":
                opts[key] = tuple(_numbers(value, 2))
            elif kind == "optfloat":
                opts[key] = None if value.lower() in ("none", "off") else float(value)
            elif kind is bool:
                opts[key] = _bool(value)
            else:
                opts[key] = kind(value)
        except ValueError as exc:
            fail(str(exc), lineno)

    c_lower, c_upper = {}, {}
    hdr, lines = section("coefficient_bounds", required=False)
    for lineno, l in lines:
        m = re.match(r"^(.+?)\s*(>=|<=)\s*(\S+)$", l)
        if not m:
            fail("coefficient bounds read '<monomial> >= value' or '<= value'", lineno)
        try:
            alpha = _monomial_exponent(poly(m.group(1), names, lineno))
            value = float(m.group(3))
        except ValueError as exc:
            if isinstance(exc, ProblemFileError):
                raise
            fail(str(exc), lineno)
        if alpha not in template:
            fail(f"monomial {m.group(1)} is not in the template", lineno)
        (c_lower if m.group(2) == ">=" else c_upper)[template.index(alpha)] = value
    opts["c_lower"] = c_lower
    opts["c_upper"] = c_upper
    if overrides:
        opts.update({k: v for k, v in overrides.items() if v is not None})

    box_dynamics = None
    if box_f:
        boxes = zero_split(region)
        box_dynamics = tuple(box_f.get(i + 1, f) for i in range(len(boxes)))
        if max(box_f) > len(boxes):
            raise ProblemFileError(f"dynamics for box {max(box_f)} but only {len(boxes)} boxes", source)

    try:
        problem = SynthesisProblem(
            variables=tuple(names), f=f, g=g, h=tuple(h), H=H, region=region, inputs=tuple(inputs),
            template=tuple(template), options=SynthesisOptions(**opts), outputs=tuple(out_names),
            box_dynamics=box_dynamics,
        )
    except ValueError as exc:
        raise ProblemFileError(str(exc), source) from None

    certificate = None
    hdr, lines = section("certificate", required=False)
    if lines:
        V = None
        thetas = {}
        for lineno, l in lines:
            m = re.match(r"^(V|theta)(?:\s+(\d+))?\s*=\s*(.+)$", l)
            if not m:
                fail("certificate lines read 'V = poly' or 'theta [k] = numbers'", lineno)
            if m.group(1) == "V":
                V = poly(m.group(3), names, lineno)
            else:
                try:
                    vals = np.array(_numbers(m.group(3), problem.n_gains))
                except ValueError as exc:
                    fail(str(exc), lineno)
                thetas[int(m.group(2) or 1)] = vals
        if V is None or not thetas:
            fail("certificate needs both V and theta", hdr)
        certificate = PublishedCertificate(V, [thetas[k] for k in sorted(thetas)])
    return ProblemSpec(problem, title, certificate)


def load_problem(path, overrides: dict | None = None) -> ProblemSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemFileError(f"cannot read file: {exc.strerror}", str(path)) from None
    return parse_problem(text, str(path), overrides)


def _fmt(v: float) -> str:
    return repr(float(v))


def format_problem(spec: ProblemSpec) -> str:
    """Canonical text of a problem; ``parse_problem`` of it gives the same problem."""
    pr = spec.problem
    names = list(pr.variables)
    out_names = list(pr.outputs) or names
    o = pr.options
    lines = []
    if spec.name:
        lines += ["[name]", spec.name, ""]
    lines += ["[variables]", ", ".join(names), "", "[dynamics]"]
    lines += [f"{v}' = {p.to_string(names)}" for v, p in zip(names, pr.f)]
    if pr.box_dynamics is not None:
        for i, fi in enumerate(pr.box_dynamics, start=1):
            if tuple(fi) != tuple(pr.f):
                lines += ["", f"[dynamics {i}]"] + [f"{v}' = {p.to_string(names)}" for v, p in zip(names, fi)]
    lines += ["", "[control]"]
    lines += [", ".join(e.to_string(names) for e in row) for row in pr.g.entries]
    lines += ["", "[outputs]"]
    lines += [f"{y} = {p.to_string(names)}" for y, p in zip(out_names, pr.h)]
    lines += ["", "[structure]"]
    lines += [", ".join(e.to_string(out_names) for e in row) for row in pr.H.entries]
    lines += ["", "[region]"]
    lines += [f"{v} = {_fmt(a)}, {_fmt(b)}" for v, a, b in zip(names, pr.region.lower, pr.region.upper)]
    if pr.inputs:
        lines += ["", "[inputs]"]
        lines += [f"halfspace = {', '.join(_fmt(a) for a in alpha)} <= {_fmt(beta)}" for alpha, beta in pr.inputs]
    lines += ["", "[template]"]
    lines += [", ".join(Polynomial.monomial(m).to_string(names) for m in pr.template)]
    if o.c_lower or o.c_upper:
        lines += ["", "[coefficient_bounds]"]
        for i, v in sorted(o.c_lower.items()):
            lines.append(f"{Polynomial.monomial(pr.template[i]).to_string(names)} >= {_fmt(v)}")
        for i, v in sorted(o.c_upper.items()):
            lines.append(f"{Polynomial.monomial(pr.template[i]).to_string(names)} <= {_fmt(v)}")
    lines += ["", "[options]"]
    for key in _OPTION_TYPES:
        v = getattr(o, key)
        if isinstance(v, tuple):
            v = f"{_fmt(v[0])}, {_fmt(v[1])}"
        elif v is None:
            v = "none"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = _fmt(v)
        lines.append(f"{key} = {v}")
    if spec.certificate is not None:
        lines += ["", "[certificate]", f"V = {spec.certificate.V.to_string(names)}"]
        for k, th in enumerate(spec.certificate.theta, start=1):
            lines.append(f"theta {k} = {', '.join(_fmt(v) for v in th)}")
    return "\n".join(lines) + "\n"
