"""Stabilizing controllers and Lyapunov functions for polynomial systems by Bernstein LP relaxations."""
from .bernstein import bernstein_coefficients, node_bound, pop_lower_bound
from .linprog import LinearProgram, LpStatus, forall_implies_dual, solve
from .parsing import parse_polynomial
from .poly import Box, PolyMatrix, Polynomial
from .problem_file import load_problem, parse_problem
from .synthesis import (
    Status,
    SynthesisOptions,
    SynthesisProblem,
    SynthesisResult,
    policy_iteration,
    synthesize,
    synthesize_hybrid,
    zero_split,
)
from .verify import check_certificate, simulate

__version__ = "0.1.0"
