"""Benchmark problems, their exact solutions and error norms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .femspace import FESpace, QuadratureRule, TestBasis, default_rule, lattice, scalar_field
from .hessian import assemble
from .mesh import Mesh, disk_mesh, structured_mesh
from .sdpmodel import (ObjectiveSpec, SdpProblem, add_convexity_constraints,
                       add_problem_constraints, build_objective)

MONOPOLIST_A = 2.0 / 3.0
MONOPOLIST_B = (4.0 - np.sqrt(2.0)) / 3.0


@dataclass(frozen=True)
class BenchmarkProblem:
    """A functional over FE-convex functions plus side constraints.

    ``constraints`` holds ``(kind, params)`` pairs understood by
    :func:`add_problem_constraints`.
    """

    name: str
    domain: str
    objective: ObjectiveSpec
    constraints: tuple = ()
    exact_solution: object = None
    params: dict = field(default_factory=dict)

    def initial_mesh(self, pattern: str = "crisscross", n: int = 2, level: int = 2) -> Mesh:
        if self.domain == "disk":
            return disk_mesh(1.0, level)
        return structured_mesh(pattern, n)

    def build(self, space: FESpace, test: TestBasis | None = None,
              rule: QuadratureRule | None = None) -> SdpProblem:
        """Objective, FE-convexity blocks and side constraints on ``space``."""
        test = test if test is not None else TestBasis(space.mesh, degree=space.degree)
        problem = build_objective(space, rule, self.objective)
        problem = add_convexity_constraints(problem, assemble(space, test))
        for kind, params in self.constraints:
            problem = add_problem_constraints(problem, kind, **params)
        return problem


@dataclass(frozen=True)
class ErrorReport:
    l2: float
    linf: float


# ------------------------------------------------------------ monopolist
def monopolist_exact(x) -> np.ndarray:
    """``max{0, x1 - a, x2 - a, x1 + x2 - b}``, the c = 0, f = 1 solution."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a, b = MONOPOLIST_A, MONOPOLIST_B
    return np.maximum.reduce([np.zeros(len(x)), x[:, 0] - a, x[:, 1] - a, x[:, 0] + x[:, 1] - b])


def monopolist(c: float = 0.0, density=None, gradient_collocation: str = "vertices") -> BenchmarkProblem:
    """Revenue maximization on the unit square, posed as minimizing
    ``int (c |grad u|^2 - x . grad u + u) f dx``.

    ``density`` is ``f`` (a constant or callable, default 1). The exact
    solution is attached for ``c = 0`` with the uniform density.
    """
    if c < 0:
        raise ValueError("c must be nonnegative")
    f = 1.0 if density is None else density

    def gamma(x):
        return -x * scalar_field(f, x)[:, None]

    alpha = None
    if c > 0:
        alpha = (lambda x: c * scalar_field(f, x)) if callable(f) else c * f
    spec = ObjectiveSpec(alpha=alpha, gamma=gamma, f=f)
    constraints = (("point_value", {"point": (0.0, 0.0), "value": 0.0}),
                   ("gradient_box", {"lo": 0.0, "hi": 1.0, "at": gradient_collocation}))
    exact = monopolist_exact if (c == 0 and density is None) else None
    return BenchmarkProblem("monopolist", "unit_square", spec, constraints, exact, {"c": c})


# ------------------------------------------------------------ projections
def projection(norm: str, target, constraints=(), target_grad=None) -> BenchmarkProblem:
    """Projection of ``target`` onto FE-convex functions in ``L2`` or ``H1``."""
    norm = norm.upper()
    if norm == "L2":
        spec = ObjectiveSpec(beta=1.0, v2=target)
    elif norm == "H1":
        spec = ObjectiveSpec(alpha=1.0, v1=target, v1_grad=target_grad, beta=1.0, v2=target)
    else:
        raise ValueError(f"unknown norm {norm!r}; expected L2 or H1")
    return BenchmarkProblem(f"projection-{norm.lower()}", "unit_square", spec,
                            tuple(constraints), target, {"norm": norm})


def nonconvergence_target(x) -> np.ndarray:
    """``(x2 - x1/2 - 1/4)^2``, convex with straight level lines."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return (x[:, 1] - 0.5 * x[:, 0] - 0.25) ** 2


# ------------------------------------------------------------ Dirichlet
def two_disk_source(x) -> np.ndarray:
    """``+1`` on the disk of radius 1/2 about (0, -1), ``-1`` about (0, 1), else 0."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lower = x[:, 0] ** 2 + (x[:, 1] + 1) ** 2 <= 0.25
    upper = x[:, 0] ** 2 + (x[:, 1] - 1) ** 2 <= 0.25
    return lower.astype(float) - upper.astype(float)


def dirichlet_functional(f=None) -> BenchmarkProblem:
    """``1/2 int |grad u|^2 + int f u`` over mean-zero convex functions on the unit disk."""
    source = two_disk_source if f is None else f
    spec = ObjectiveSpec(alpha=0.5, f=source)
    return BenchmarkProblem("dirichlet", "disk", spec, (("mean_zero", {}),), None, {})


def minus_x(x) -> np.ndarray:
    """The monopolist's linear coefficient ``gamma(x) = -x``."""
    return -np.atleast_2d(np.asarray(x, dtype=float))


# named coefficient functions usable from config files
FUNCTIONS = {
    "nonconvergence_target": nonconvergence_target,
    "two_disk_source": two_disk_source,
    "monopolist_exact": monopolist_exact,
    "minus_x": minus_x,
}


def custom_problem(domain: str = "unit_square", constraints=(), exact=None, **coefficients) -> BenchmarkProblem:
    """Problem assembled from objective coefficients (constants, pairs for
    ``gamma``, or callables) and ``(kind, params)`` constraint pairs."""
    if domain not in ("unit_square", "disk"):
        raise ValueError(f"unknown domain {domain!r}; expected unit_square or disk")
    unknown = set(coefficients) - {"alpha", "beta", "gamma", "f", "v1", "v2"}
    if unknown:
        raise ValueError(f"unknown objective coefficients {sorted(unknown)}")
    spec = ObjectiveSpec(**coefficients)
    for name in ("alpha", "beta"):
        value = getattr(spec, name)
        if value is not None and not callable(value) and float(value) < 0:
            raise ValueError(f"{name} must be nonnegative")
    return BenchmarkProblem("custom", domain, spec, tuple(constraints), exact, {})


PROBLEMS = {
    "monopolist": lambda **kw: monopolist(**kw),
    "projection-l2": lambda target=nonconvergence_target, **kw: projection("L2", target, **kw),
    "projection-h1": lambda target=nonconvergence_target, **kw: projection("H1", target, **kw),
    "dirichlet": lambda **kw: dirichlet_functional(**kw),
    "custom": lambda **kw: custom_problem(**kw),
}


def get_problem(name: str, **params) -> BenchmarkProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**params)


# ------------------------------------------------------------ errors
def error_norms(space: FESpace, coeffs, exact, rule: QuadratureRule | None = None,
                sample_order: int = 6) -> ErrorReport:
    """L2 error by the element quadrature rule, L-infinity error by sampling a
    barycentric lattice of ``(order + 1)(order + 2)/2`` points per cell."""
    rule = rule or default_rule()
    X, W = space.quadrature(rule)
    e = space.cell_values(coeffs, rule.points) - scalar_field(exact, X.reshape(-1, 2)).reshape(W.shape)
    l2 = float(np.sqrt(max(np.sum(W * e * e), 0.0)))
    lat = lattice(sample_order)
    XL = space.physical_points(lat)
    eL = space.cell_values(coeffs, lat) - scalar_field(exact, XL.reshape(-1, 2)).reshape(XL.shape[:2])
    return ErrorReport(l2, float(np.abs(eL).max()))
