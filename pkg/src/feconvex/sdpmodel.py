"""Semidefinite models of quadratic-affine functionals over FE-convex functions.

The discrete functional is

    J_h(u) = sum_i w_i [alpha |grad(u - v1)|^2 + beta (u - v2)^2 + gamma . grad u + f u](x_i)

over the quadrature points ``x_i``. Squares are moved into epigraph variables
``t_ij >= (d_j u - d_j v1)^2`` and ``s_i >= (u - v2)^2``, each written as a
2x2 block ``[[1, e], [e, t]] >= 0``. Variables are ordered ``[u | t | s]``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .femspace import FESpace, QuadratureRule, default_rule, scalar_field, vector_field
from .hessian import HessianForm, HessianForms
from .mesh import locate
from .solver import ConeProgram

CONSTRAINT_KINDS = ("equality", "inequality_le")
PROBLEM_CONSTRAINTS = ("mean_zero", "point_value", "gradient_box", "boundary_values")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Coefficient functions of the integrand; ``None`` means identically zero.

    Each entry is a constant or a callable on ``(N, 2)`` points. ``v1_grad``
    may supply the gradient of ``v1``; otherwise it is taken by central
    differences.
    """

    alpha: object = None
    beta: object = None
    gamma: object = None
    f: object = None
    v1: object = None
    v2: object = None
    v1_grad: object = None


@dataclass(frozen=True)
class LinearConstraint:
    """Rows ``coefficients @ x (= or <=) rhs``; a single constraint is a one-row group."""

    kind: str
    coefficients: sp.csr_matrix
    rhs: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        C = sp.csr_matrix(self.coefficients)
        rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        if C.shape[0] != rhs.shape[0]:
            raise ValueError("coefficient rows and rhs differ in length")
        if C.shape[0] and np.any(np.diff(C.indptr) == 0):
            raise ValueError("constraint row without nonzero coefficients")
        object.__setattr__(self, "coefficients", C)
        object.__setattr__(self, "rhs", rhs)

    def __len__(self) -> int:
        return self.coefficients.shape[0]

    def residual(self, x) -> np.ndarray:
        """``C x - rhs``; feasible rows have zero (equality) or nonpositive values."""
        return self.coefficients @ np.asarray(x, dtype=float) - self.rhs


@dataclass(frozen=True)
class PsdGroup:
    """``count`` blocks ``F0[b] + sum_j x_j F_j[b]`` of size ``k``.

    ``F`` is sparse with ``count * k * k`` rows in row-major block order.
    """

    k: int
    F0: np.ndarray
    F: sp.csr_matrix
    label: str = ""

    @property
    def count(self) -> int:
        return self.F0.shape[0]

    def blocks(self, x) -> np.ndarray:
        v = self.F0.reshape(-1) + self.F @ np.asarray(x, dtype=float)
        return v.reshape(self.count, self.k, self.k)

    def min_eigenvalues(self, x) -> np.ndarray:
        return np.linalg.eigvalsh(self.blocks(x))[:, 0] if self.count else np.zeros(0)


@dataclass(frozen=True)
class SdpProblem:
    space: FESpace
    rule: QuadratureRule
    spec: ObjectiveSpec
    n_u: int
    t_index: np.ndarray           # (N, 2) variable ids of t_ij, -1 where alpha = 0
    s_index: np.ndarray           # (N,) variable ids of s_i, -1 where beta = 0
    cost: np.ndarray
    constraints: tuple = ()
    psd_groups: tuple = ()

    @property
    def n_variables(self) -> int:
        return len(self.cost)

    @property
    def n_t(self) -> int:
        return int(np.sum(self.t_index >= 0))

    @property
    def n_s(self) -> int:
        return int(np.sum(self.s_index >= 0))

    @property
    def n_blocks(self) -> int:
        return sum(g.count for g in self.psd_groups)

    def u_part(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[: self.n_u]

    def objective(self, x) -> float:
        return float(self.cost @ x)

    def with_auxiliary(self, u) -> np.ndarray:
        """Full variable vector for ``u`` with ``t``, ``s`` at their smallest feasible values."""
        u = np.asarray(u, dtype=float)
        x = np.zeros(self.n_variables)
        x[: self.n_u] = u
        q = _QuadData(self.space, self.rule, self.spec)
        e = q.D @ u - q.dv1.reshape(-1)
        ti = self.t_index.reshape(-1)
        x[ti[ti >= 0]] = e[ti >= 0] ** 2
        g = q.E @ u - q.v2
        x[self.s_index[self.s_index >= 0]] = g[self.s_index >= 0] ** 2
        return x

    def max_violation(self, x) -> float:
        """Largest violation over linear rows and PSD blocks (0 when feasible)."""
        worst = 0.0
        for con in self.constraints:
            r = con.residual(x)
            if len(r):
                worst = max(worst, float(np.abs(r).max() if con.kind == "equality" else r.max()))
        for g in self.psd_groups:
            lam = g.min_eigenvalues(x)
            if lam.size:
                worst = max(worst, float(-lam.min()))
        return max(worst, 0.0)

    def to_cone_program(self) -> ConeProgram:
        """Standard form ``min c'x, A x = b, h - G x in R^l_+ x prod S^k``."""
        n = self.n_variables
        eq = [c for c in self.constraints if c.kind == "equality"]
        le = [c for c in self.constraints if c.kind == "inequality_le"]
        A = sp.vstack([c.coefficients for c in eq], format="csr") if eq else sp.csr_matrix((0, n))
        b = np.concatenate([c.rhs for c in eq]) if eq else np.zeros(0)
        G_rows = [c.coefficients for c in le]
        h_parts = [c.rhs for c in le]
        l = sum(len(c) for c in le)
        psd = []
        for k in sorted({g.k for g in self.psd_groups}):
            groups = [g for g in self.psd_groups if g.k == k and g.count]
            if not groups:
                continue
            G_rows += [-g.F for g in groups]
            h_parts += [g.F0.reshape(-1) for g in groups]
            psd.append((k, sum(g.count for g in groups)))
        G = sp.vstack(G_rows, format="csr") if G_rows else sp.csr_matrix((0, n))
        h = np.concatenate(h_parts) if h_parts else np.zeros(0)
        return ConeProgram(self.cost, G, h, l, psd, A, b)


# ------------------------------------------------------------ quadrature data
def _central_gradient(f, x, step=1e-6):
    out = np.empty((len(x), 2))
    for j in range(2):
        d = np.zeros(2)
        d[j] = step
        out[:, j] = (scalar_field(f, x + d) - scalar_field(f, x - d)) / (2 * step)
    return out


class _QuadData:
    """Coefficients and evaluation matrices at the flattened quadrature points."""

    def __init__(self, space: FESpace, rule: QuadratureRule, spec: ObjectiveSpec):
        X, W = space.quadrature(rule)
        M, nq = W.shape
        self.x = X.reshape(-1, 2)
        self.w = W.reshape(-1)
        zero = 0.0
        self.alpha = scalar_field(zero if spec.alpha is None else spec.alpha, self.x)
        self.beta = scalar_field(zero if spec.beta is None else spec.beta, self.x)
        self.gamma = vector_field(zero if spec.gamma is None else spec.gamma, self.x)
        self.f = scalar_field(zero if spec.f is None else spec.f, self.x)
        self.v2 = scalar_field(zero if spec.v2 is None else spec.v2, self.x)
        if spec.v1_grad is not None:
            self.dv1 = vector_field(spec.v1_grad, self.x)
        elif spec.v1 is not None and callable(spec.v1):
            self.dv1 = _central_gradient(spec.v1, self.x)
        else:
            self.dv1 = np.zeros((len(self.x), 2))

        self.E, self.Dx, self.Dy = point_matrices(space, rule.points)

    @property
    def D(self) -> sp.csr_matrix:
        return _interleave(self.Dx, self.Dy)


def _interleave(Dx, Dy):
    """Row ``2 i + j`` is ``d_j u(x_i)``."""
    N = Dx.shape[0]
    stacked = sp.vstack([Dx, Dy], format="csr")
    perm = np.arange(2 * N).reshape(2, N).T.reshape(-1)
    return stacked[perm]


def point_matrices(space: FESpace, bary):
    """Sparse maps from coefficients to values and partial derivatives at the
    barycentric points ``bary`` of every cell (rows ordered cell-major)."""
    bary = np.asarray(bary, dtype=float)
    M, nq = space.mesh.n_cells, len(bary)
    rows = np.repeat(np.arange(M * nq), space.n_local)
    cols = np.repeat(space.element_dofs, nq, axis=0).reshape(-1)
    vals = np.broadcast_to(space.values(bary), (M, nq, space.n_local)).reshape(-1)
    shape = (M * nq, space.n_dofs)
    g = space.grads(bary)                                  # (M, nq, nloc, 2)
    E = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    Dx = sp.csr_matrix((g[..., 0].reshape(-1), (rows, cols)), shape=shape)
    Dy = sp.csr_matrix((g[..., 1].reshape(-1), (rows, cols)), shape=shape)
    return E, Dx, Dy


_CENTROID = np.array([[1 / 3, 1 / 3, 1 / 3]])


def _epigraph_group(Erows: sp.csr_matrix, offsets: np.ndarray, aux: np.ndarray, n: int, label: str):
    """Blocks ``[[1, e], [e, x_aux]]`` with ``e = Erows @ u - offsets``."""
    nb = Erows.shape[0]
    F0 = np.zeros((nb, 2, 2))
    F0[:, 0, 0] = 1.0
    F0[:, 0, 1] = F0[:, 1, 0] = -offsets
    E = sp.csr_matrix(Erows, shape=(nb, n))
    T = sp.csr_matrix((np.ones(nb), (np.arange(nb), aux)), shape=(nb, n))
    Z = sp.csr_matrix((nb, n))
    F = sp.vstack([Z, E, E, T], format="csr")
    perm = np.arange(4 * nb).reshape(4, nb).T.reshape(-1)
    return PsdGroup(2, F0, F[perm], label)


# ------------------------------------------------------------ operations
def build_objective(space: FESpace, rule: QuadratureRule | None, spec: ObjectiveSpec) -> SdpProblem:
    """Linear cost over ``[u | t | s]`` and the epigraph blocks of the squared terms."""
    rule = rule or default_rule()
    q = _QuadData(space, rule, spec)
    if np.any(q.alpha < 0) or np.any(q.beta < 0):
        raise ValueError("alpha and beta must be nonnegative at every quadrature point")
    N, n_u = len(q.w), space.n_dofs

    t_mask = np.repeat(q.alpha > 0, 2)
    s_mask = q.beta > 0
    n_t, n_s = int(t_mask.sum()), int(s_mask.sum())
    n = n_u + n_t + n_s
    t_index = np.full(2 * N, -1)
    t_index[t_mask] = n_u + np.arange(n_t)
    s_index = np.full(N, -1)
    s_index[s_mask] = n_u + n_t + np.arange(n_s)

    cost = np.zeros(n)
    cost[:n_u] = (q.w * q.f) @ q.E + (q.w * q.gamma[:, 0]) @ q.Dx + (q.w * q.gamma[:, 1]) @ q.Dy
    cost[t_index[t_mask]] = np.repeat(q.w * q.alpha, 2)[t_mask]
    cost[s_index[s_mask]] = (q.w * q.beta)[s_mask]

    groups = []
    if n_t:
        D = q.D[t_mask]
        groups.append(_epigraph_group(D, q.dv1.reshape(-1)[t_mask], t_index[t_mask], n, "gradient"))
    if n_s:
        groups.append(_epigraph_group(q.E[s_mask], q.v2[s_mask], s_index[s_mask], n, "value"))
    return SdpProblem(space, rule, spec, n_u, t_index.reshape(N, 2), s_index, cost,
                      (), tuple(groups))


def _pad(C, n):
    C = sp.csr_matrix(C)
    return sp.csr_matrix((C.data, C.indices, C.indptr), shape=(C.shape[0], n))


def add_convexity_constraints(problem: SdpProblem, forms, normalize: bool = True) -> SdpProblem:
    """One 2x2 block ``H_s u >= 0`` per test function.

    ``forms`` is a :class:`HessianForms` (or a list of :class:`HessianForm`
    over the same trial space). With ``normalize`` each block is divided by
    the integral of its test function; this does not change the constraint
    but keeps block entries of order one on fine meshes.
    """
    n = problem.n_variables
    if isinstance(forms, HessianForms):
        if forms.trial.n_dofs != problem.n_u or forms.trial.mesh is not problem.space.mesh:
            raise ValueError("Hessian forms live on a different trial space")
        H11, H12, H22 = forms.H11, forms.H12, forms.H22
        scale = _test_integrals(forms) if normalize else np.ones(forms.n_tests)
    else:
        forms = list(forms)
        if not forms:
            return problem
        H11, H12, H22 = _stack_forms(forms, problem.n_u)
        scale = np.ones(len(forms))
    nb = H11.shape[0]
    if nb == 0:
        return problem
    Dinv = sp.diags(1.0 / scale)
    comps = [_pad(Dinv @ M, n) for M in (H11, H12, H12, H22)]
    F = sp.vstack(comps, format="csr")
    perm = np.arange(4 * nb).reshape(4, nb).T.reshape(-1)
    group = PsdGroup(2, np.zeros((nb, 2, 2)), F[perm], "convexity")
    return replace(problem, psd_groups=problem.psd_groups + (group,))


def _test_integrals(forms: HessianForms) -> np.ndarray:
    test = forms.test
    rule = default_rule()
    local = 2.0 * test.mesh.areas[:, None] * (rule.weights @ test.values(rule.points))[None, :]
    rows = test.cell_tests.ravel()
    keep = rows >= 0
    return np.bincount(rows[keep], local.ravel()[keep], minlength=test.n_tests)


def _stack_forms(forms: list[HessianForm], n_u: int):
    mats = [[], [], []]
    for s, form in enumerate(forms):
        for r, m in form.entries.items():
            if not 0 <= r < n_u:
                raise ValueError("Hessian form references an unknown trial DOF")
            for c, (i, j) in enumerate(((0, 0), (0, 1), (1, 1))):
                mats[c].append((s, r, m[i, j]))
    out = []
    for entries in mats:
        s, r, v = zip(*entries) if entries else ((), (), ())
        out.append(sp.csr_matrix((v, (s, r)), shape=(len(forms), n_u)))
    return out


def add_problem_constraints(problem: SdpProblem, kind: str, **params) -> SdpProblem:
    """Append ``mean_zero``, ``point_value(point, value)``, ``gradient_box(lo, hi, at)``
    or ``boundary_values(g)`` rows.

    ``gradient_box`` bounds both partial derivatives at the quadrature points
    (``at="quadrature"``) or at the cell vertices (``at="vertices"``). Gradients
    of P1/P2 functions are affine on each cell, so the vertex variant enforces
    the box everywhere.
    """
    space, n = problem.space, problem.n_variables
    if kind == "mean_zero":
        row = sp.csr_matrix(space.integrals(problem.rule)[None, :])
        new = [LinearConstraint("equality", _pad(row, n), [0.0], "mean_zero")]
    elif kind == "point_value":
        point = np.asarray(params.get("point", (0.0, 0.0)), dtype=float)
        value = float(params.get("value", 0.0))
        if locate(space.mesh, point[None])[0] < 0:
            raise ValueError(f"point {point.tolist()} lies outside the domain")
        hit = np.flatnonzero(np.linalg.norm(space.dof_points - point, axis=1) < 1e-12)
        if hit.size:
            row = sp.csr_matrix(([1.0], ([0], [hit[0]])), shape=(1, n))
        else:
            cells, bary = space.barycentric(point[None])
            vals = space.values(bary)[0]
            row = sp.csr_matrix((vals, ([0] * len(vals), space.element_dofs[cells[0]])), shape=(1, n))
        new = [LinearConstraint("equality", row, [value], "point_value")]
    elif kind == "gradient_box":
        lo, hi = float(params.get("lo", 0.0)), float(params.get("hi", 1.0))
        at = params.get("at", "quadrature")
        if lo > hi:
            raise ValueError("gradient_box needs lo <= hi")
        if at == "quadrature":
            bary = problem.rule.points
        elif at == "vertices":
            # P1 gradients are constant per cell, so one point per cell suffices
            bary = np.eye(3) if space.degree == 2 else _CENTROID
        else:
            raise ValueError(f"gradient_box: unknown collocation {at!r}")
        _, Dx, Dy = point_matrices(space, bary)
        D = _pad(_interleave(Dx, Dy), n)
        m = D.shape[0]
        rows = sp.vstack([D, -D], format="csr")
        rhs = np.concatenate([np.full(m, hi), np.full(m, -lo)])
        keep = np.diff(rows.indptr) > 0
        new = [LinearConstraint("inequality_le", rows[keep], rhs[keep], "gradient_box")]
    elif kind == "boundary_values":
        g = params.get("g", 0.0)
        dofs = boundary_dofs(space)
        vals = scalar_field(g, space.dof_points[dofs])
        row = sp.csr_matrix((np.ones(len(dofs)), (np.arange(len(dofs)), dofs)), shape=(len(dofs), n))
        new = [LinearConstraint("equality", row, vals, "boundary_values")]
    else:
        raise ValueError(f"unknown constraint {kind!r}; expected one of {PROBLEM_CONSTRAINTS}")
    new = [c for c in new if len(c)]
    return replace(problem, constraints=problem.constraints + tuple(new))


def boundary_dofs(space: FESpace) -> np.ndarray:
    mesh = space.mesh
    dofs = np.flatnonzero(mesh.boundary_vertex_mask)
    if space.degree == 2:
        dofs = np.concatenate([dofs, mesh.n_vertices + mesh.boundary_edge_ids])
    return np.sort(dofs)


def functional_value(space: FESpace, spec: ObjectiveSpec, coeffs, rule: QuadratureRule | None = None) -> float:
    """``J_h(u)`` evaluated directly at the quadrature points (no auxiliary variables)."""
    rule = rule or default_rule()
    q = _QuadData(space, rule, spec)
    u = np.asarray(coeffs, dtype=float)
    val, gx, gy = q.E @ u, q.Dx @ u, q.Dy @ u
    grad = np.column_stack([gx, gy])
    integrand = (q.alpha * np.sum((grad - q.dv1) ** 2, axis=1) + q.beta * (val - q.v2) ** 2
                 + np.sum(q.gamma * grad, axis=1) + q.f * val)
    return float(q.w @ integrand)
