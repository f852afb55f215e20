"""Lagrange trial spaces, the nonnegative test basis and quadrature.

Callables passed to :func:`interpolate` and friends are vectorized: they take
an ``(N, 2)`` array of points and return an ``(N,)`` array (or ``(N, 2)`` for
vector fields).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import Mesh, locate

# symmetric 6-point rule, exact for total degree 4 (orbit parameters polished
# to 40 digits from the moment equations)
_A1 = 0.44594849091596488632
_A2 = 0.091576213509770743460
_W1 = 0.22338158967801146570
_W2 = 0.10995174365532186764


@dataclass(frozen=True)
class QuadratureRule:
    """Triangle rule on the reference triangle (area 1/2).

    ``points`` are barycentric coordinates ``(nq, 3)``; ``weights`` sum to 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def size(self) -> int:
        return len(self.weights)


def default_rule() -> QuadratureRule:
    pts = []
    for a in (_A1, _A2):
        b = 1.0 - 2.0 * a
        pts += [(a, a, b), (a, b, a), (b, a, a)]
    w = np.array([_W1] * 3 + [_W2] * 3) / 2.0
    return QuadratureRule(np.array(pts), w, 4)


def lattice(order: int) -> np.ndarray:
    """Barycentric lattice with ``(order+1)(order+2)/2`` points."""
    pts = [(i / order, j / order, (order - i - j) / order)
           for i in range(order + 1) for j in range(order + 1 - i)]
    return np.array(pts)


GAUSS2 = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]), np.array([0.5, 0.5]))


def scalar_field(f, x) -> np.ndarray:
    """Evaluate a scalar callable (or constant) at points ``(N, 2)``."""
    x = np.asarray(x, dtype=float)
    val = f(x) if callable(f) else f
    return np.array(np.broadcast_to(np.asarray(val, dtype=float), (len(x),)))


def vector_field(f, x) -> np.ndarray:
    """Evaluate an R^2-valued callable (or constant pair) at points ``(N, 2)``."""
    x = np.asarray(x, dtype=float)
    val = f(x) if callable(f) else f
    return np.array(np.broadcast_to(np.asarray(val, dtype=float), (len(x), 2)))


def _grad_lambda(mesh: Mesh) -> np.ndarray:
    p = mesh.points[mesh.cells]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
    Jinv = np.linalg.inv(J)
    g = np.empty((mesh.n_cells, 3, 2))
    g[:, 1] = Jinv[:, 0]
    g[:, 2] = Jinv[:, 1]
    g[:, 0] = -g[:, 1] - g[:, 2]
    return g


def _pairs():
    # local edge k joins the two vertices other than k
    return [((k + 1) % 3, (k + 2) % 3) for k in range(3)]


def lagrange_values(degree: int, bary: np.ndarray) -> np.ndarray:
    """Values ``(nq, nloc)`` of the local Lagrange basis at barycentric points."""
    L = np.asarray(bary, dtype=float)
    if degree == 1:
        return L.copy()
    cols = [L[:, k] * (2 * L[:, k] - 1) for k in range(3)]
    cols += [4 * L[:, i] * L[:, j] for i, j in _pairs()]
    return np.stack(cols, axis=1)


def lagrange_grads(degree: int, bary: np.ndarray, grad_lambda: np.ndarray) -> np.ndarray:
    """Gradients ``(M, nq, nloc, 2)``."""
    L = np.asarray(bary, dtype=float)
    gl = grad_lambda[:, None, :, :]  # (M, 1, 3, 2)
    if degree == 1:
        return np.broadcast_to(gl, (grad_lambda.shape[0], len(L), 3, 2)).copy()
    out = np.empty((grad_lambda.shape[0], len(L), 6, 2))
    for k in range(3):
        out[:, :, k] = (4 * L[:, k] - 1)[None, :, None] * gl[:, :, k]
    for k, (i, j) in enumerate(_pairs()):
        out[:, :, 3 + k] = 4 * (L[:, j][None, :, None] * gl[:, :, i]
                                + L[:, i][None, :, None] * gl[:, :, j])
    return out


def test_values(degree: int, bary: np.ndarray) -> np.ndarray:
    """Hats ``lambda_k`` followed (degree 2) by bubbles ``lambda_i lambda_j``."""
    L = np.asarray(bary, dtype=float)
    if degree == 1:
        return L.copy()
    return np.concatenate([L, np.stack([L[:, i] * L[:, j] for i, j in _pairs()], axis=1)], axis=1)


def test_grads(degree: int, bary: np.ndarray, grad_lambda: np.ndarray) -> np.ndarray:
    L = np.asarray(bary, dtype=float)
    gl = grad_lambda[:, None, :, :]
    M = grad_lambda.shape[0]
    hats = np.broadcast_to(gl, (M, len(L), 3, 2))
    if degree == 1:
        return hats.copy()
    bub = np.empty((M, len(L), 3, 2))
    for k, (i, j) in enumerate(_pairs()):
        bub[:, :, k] = L[:, j][None, :, None] * gl[:, :, i] + L[:, i][None, :, None] * gl[:, :, j]
    return np.concatenate([hats, bub], axis=2)


class FESpace:
    """Continuous Lagrange space of degree 1 or 2.

    DOFs are numbered vertices first, then (degree 2) edge midpoints in mesh
    edge order. ``element_dofs[t, k]`` is the global DOF of local basis
    function ``k`` on cell ``t``.
    """

    def __init__(self, mesh: Mesh, degree: int):
        if degree not in (1, 2):
            raise ValueError(f"unsupported degree {degree}; expected 1 or 2")
        self.mesh = mesh
        self.degree = degree
        V = mesh.n_vertices
        if degree == 1:
            self.element_dofs = mesh.cells.copy()
            self.dof_points = mesh.points.copy()
            self.dof_kind = np.zeros(V, dtype=np.int8)
        else:
            self.element_dofs = np.hstack([mesh.cells, V + mesh.cell_edges])
            mids = 0.5 * (mesh.points[mesh.edges[:, 0]] + mesh.points[mesh.edges[:, 1]])
            self.dof_points = np.vstack([mesh.points, mids])
            self.dof_kind = np.concatenate([np.zeros(V, np.int8), np.ones(mesh.n_edges, np.int8)])
        for a in (self.element_dofs, self.dof_points, self.dof_kind):
            a.setflags(write=False)

    @property
    def n_dofs(self) -> int:
        return len(self.dof_points)

    @property
    def n_local(self) -> int:
        return self.element_dofs.shape[1]

    @property
    def dofs(self) -> list[tuple[tuple[float, float], str]]:
        kinds = ("vertex", "edge_midpoint")
        return [((float(x), float(y)), kinds[k]) for (x, y), k in zip(self.dof_points, self.dof_kind)]

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        return _grad_lambda(self.mesh)

    def values(self, bary) -> np.ndarray:
        return lagrange_values(self.degree, bary)

    def grads(self, bary) -> np.ndarray:
        return lagrange_grads(self.degree, bary, self.grad_lambda)

    def physical_points(self, bary) -> np.ndarray:
        """Points ``(M, nq, 2)`` mapped from barycentric coordinates on every cell."""
        p = self.mesh.points[self.mesh.cells]
        return np.einsum("qk,mkd->mqd", np.asarray(bary, dtype=float), p)

    def quadrature(self, rule: QuadratureRule | None = None):
        """Physical points ``(M, nq, 2)`` and weights ``(M, nq)``."""
        rule = rule or default_rule()
        w = 2.0 * self.mesh.areas[:, None] * rule.weights[None, :]
        return self.physical_points(rule.points), w

    # ---------------------------------------------------------- evaluation
    def barycentric(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cells = locate(self.mesh, pts)
        if np.any(cells < 0):
            raise ValueError(f"point(s) outside the domain: {pts[cells < 0].tolist()}")
        p = self.mesh.points[self.mesh.cells[cells]]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        r = pts - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        return cells, np.column_stack([1 - l1 - l2, l1, l2])

    def evaluate(self, coeffs, points) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        cells, bary = self.barycentric(points)
        vals = np.stack([lagrange_values(self.degree, b[None])[0] for b in bary])
        return np.einsum("pk,pk->p", vals, coeffs[self.element_dofs[cells]])

    def gradient(self, coeffs, points) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        cells, bary = self.barycentric(points)
        out = np.empty((len(cells), 2))
        for i, (t, b) in enumerate(zip(cells, bary)):
            g = lagrange_grads(self.degree, b[None], self.grad_lambda[t:t + 1])[0, 0]
            out[i] = coeffs[self.element_dofs[t]] @ g
        return out

    def cell_values(self, coeffs, bary) -> np.ndarray:
        """Values ``(M, nq)`` of a coefficient vector at barycentric points of every cell."""
        return np.asarray(coeffs, dtype=float)[self.element_dofs] @ self.values(bary).T

    def cell_gradients(self, coeffs, bary) -> np.ndarray:
        """Gradients ``(M, nq, 2)``."""
        c = np.asarray(coeffs, dtype=float)[self.element_dofs]
        return np.einsum("mk,mqkd->mqd", c, self.grads(bary))

    def interpolate(self, f) -> np.ndarray:
        return interpolate(self, f)

    def integrals(self, rule: QuadratureRule | None = None) -> np.ndarray:
        """``[integral of phi_r over the domain]`` for every DOF."""
        rule = rule or default_rule()
        local = 2.0 * self.mesh.areas[:, None] * (rule.weights @ self.values(rule.points))[None, :]
        return np.bincount(self.element_dofs.ravel(), local.ravel(), minlength=self.n_dofs)


def build_trial_space(mesh: Mesh, degree: int) -> FESpace:
    return FESpace(mesh, degree)


def interpolate(space: FESpace, f) -> np.ndarray:
    """Lagrange interpolant: coefficient ``r`` is ``f`` at DOF node ``r``."""
    return scalar_field(f, space.dof_points)


@dataclass(frozen=True)
class TestFunction:
    index: int
    kind: str
    node: int
    support: frozenset[int]


class TestBasis:
    """Nonnegative test functions: vertex hats and (degree 2) edge bubbles.

    Hats peak at 1; the bubble of edge ``(a, b)`` is ``lambda_a * lambda_b``
    and peaks at 1/4. With ``include_boundary=False`` only functions whose
    node is interior are kept, so every function vanishes on the boundary.
    """

    __test__ = False  # not a pytest class

    def __init__(self, mesh: Mesh, include_boundary: bool = True, degree: int = 2):
        if degree not in (1, 2):
            raise ValueError("test basis degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.include_boundary = include_boundary
        V = mesh.n_vertices
        vkeep = np.ones(V, bool) if include_boundary else ~mesh.boundary_vertex_mask
        vid = np.full(V, -1, dtype=np.int64)
        vid[vkeep] = np.arange(vkeep.sum())
        kinds = [np.zeros(vkeep.sum(), np.int8)]
        nodes = [np.flatnonzero(vkeep)]
        cell_tests = [vid[mesh.cells]]
        if degree == 2:
            ekeep = np.ones(mesh.n_edges, bool)
            if not include_boundary:
                ekeep[mesh.boundary_edge_ids] = False
            eid = np.full(mesh.n_edges, -1, dtype=np.int64)
            eid[ekeep] = vkeep.sum() + np.arange(ekeep.sum())
            kinds.append(np.ones(ekeep.sum(), np.int8))
            nodes.append(np.flatnonzero(ekeep))
            cell_tests.append(eid[mesh.cell_edges])
        self.kind = np.concatenate(kinds)
        self.node = np.concatenate(nodes)
        self.cell_tests = np.hstack(cell_tests)

    def __len__(self) -> int:
        return len(self.kind)

    @property
    def n_tests(self) -> int:
        return len(self.kind)

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        return _grad_lambda(self.mesh)

    def values(self, bary) -> np.ndarray:
        return test_values(self.degree, bary)

    def grads(self, bary) -> np.ndarray:
        return test_grads(self.degree, bary, self.grad_lambda)

    def support(self, s: int) -> frozenset[int]:
        return frozenset(np.flatnonzero((self.cell_tests == s).any(axis=1)).tolist())

    @property
    def functions(self) -> list[TestFunction]:
        names = ("vertex_hat", "edge_bubble")
        rows, _ = np.nonzero(self.cell_tests >= 0)
        owner = {}
        for t, s in zip(rows, self.cell_tests[self.cell_tests >= 0]):
            owner.setdefault(int(s), set()).add(int(t))
        return [TestFunction(s, names[self.kind[s]], int(self.node[s]), frozenset(owner.get(s, ())))
                for s in range(self.n_tests)]

    def evaluate(self, s: int, points) -> np.ndarray:
        """Value of test function ``s`` at arbitrary points."""
        space = FESpace(self.mesh, 1)
        cells, bary = space.barycentric(points)
        vals = self.values(bary)  # (P, nloc) evaluated per point
        local = self.cell_tests[cells] == s
        return np.where(local, vals, 0.0).sum(axis=1)


def build_test_basis(mesh: Mesh, include_boundary: bool = True, degree: int = 2) -> TestBasis:
    return TestBasis(mesh, include_boundary, degree)
