"""Finite element approximation of convex functions with FE-Hessian constraints.

Functions are approximated in Lagrange P1/P2 spaces on triangle meshes and
required to have positive semidefinite weak Hessians against a basis of
nonnegative test functions. Minimizing quadratic-affine functionals under
these constraints gives block-structured semidefinite programs, solved by
the bundled interior-point method and optionally refined adaptively.
"""

from .adaptivity import AdaptConfig, AdaptiveRun, ErrorIndicators, adapt, estimate, mark
from .femspace import FESpace, TestBasis, default_rule, interpolate
from .hessian import assemble, check_fe_convexity, stencil_diagonal, stencil_union_jack
from .mesh import Mesh, bisect, disk_mesh, refine_marked, structured_mesh, uniform_refine
from .problems import (BenchmarkProblem, dirichlet_functional, error_norms, get_problem,
                       monopolist, projection)
from .sdpa import parse_sdpa, read_sdpa, to_sdpa, write_sdpa
from .sdpmodel import ObjectiveSpec, SdpProblem, add_convexity_constraints, add_problem_constraints, build_objective
from .solver import ConeProgram, SolverConfig, SolverResult, solve, validate_kkt

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "AdaptiveRun", "BenchmarkProblem", "ConeProgram", "ErrorIndicators", "FESpace",
    "Mesh", "ObjectiveSpec", "SdpProblem", "SolverConfig", "SolverResult", "TestBasis",
    "adapt", "add_convexity_constraints", "add_problem_constraints", "assemble", "bisect",
    "build_objective", "check_fe_convexity", "default_rule", "dirichlet_functional", "disk_mesh",
    "error_norms", "estimate", "get_problem", "interpolate", "mark", "monopolist", "parse_sdpa",
    "projection", "read_sdpa", "refine_marked", "solve", "stencil_diagonal", "stencil_union_jack",
    "structured_mesh", "to_sdpa", "uniform_refine", "validate_kkt", "write_sdpa",
]
