"""Weak FE-Hessians, FE-convexity checks and the structured-mesh stencils."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .femspace import GAUSS2, FESpace, TestBasis, default_rule, lagrange_grads, test_values


@dataclass(frozen=True)
class HessianForm:
    """The map ``r -> H_rs`` for a single test function ``s``."""

    test_index: int
    entries: dict = field(repr=False)
    with_boundary_term: bool = True

    def apply(self, coeffs) -> np.ndarray:
        out = np.zeros((2, 2))
        for r, m in self.entries.items():
            out += coeffs[r] * m
        return out


@dataclass(frozen=True)
class HessianEvaluation:
    matrix: np.ndarray
    min_eigenvalue: float


def sym2_min_eig(a, b, c):
    """Smallest eigenvalue of ``[[a, b], [b, c]]`` (closed form, vectorized)."""
    a, b, c = np.asarray(a), np.asarray(b), np.asarray(c)
    return 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)


class HessianForms:
    """All FE-Hessian maps of a trial space against a test basis.

    The three symmetric components are kept as sparse ``(n_tests, n_dofs)``
    matrices ``H11``, ``H12``, ``H22``, so ``H11 @ u`` is the (1, 1) entry of
    ``H_s u`` for every ``s`` at once.
    """

    def __init__(self, trial: FESpace, test: TestBasis, H11, H12, H22, with_boundary: bool):
        self.trial = trial
        self.test = test
        self.H11 = H11
        self.H12 = H12
        self.H22 = H22
        self.with_boundary = with_boundary

    def __len__(self) -> int:
        return self.test.n_tests

    @property
    def n_tests(self) -> int:
        return self.test.n_tests

    def apply(self, coeffs) -> np.ndarray:
        """``(n_tests, 2, 2)`` stack of ``H_s u``."""
        u = np.asarray(coeffs, dtype=float)
        if u.shape != (self.trial.n_dofs,):
            raise ValueError(f"expected {self.trial.n_dofs} coefficients, got {u.shape}")
        a, b, c = self.H11 @ u, self.H12 @ u, self.H22 @ u
        return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)

    def min_eigenvalues(self, coeffs) -> np.ndarray:
        H = self.apply(coeffs)
        return sym2_min_eig(H[:, 0, 0], H[:, 0, 1], H[:, 1, 1])

    def evaluate(self, s: int, coeffs) -> HessianEvaluation:
        u = np.asarray(coeffs, dtype=float)
        a, b, c = (float((M.getrow(s) @ u)[0]) for M in (self.H11, self.H12, self.H22))
        return HessianEvaluation(np.array([[a, b], [b, c]]), float(sym2_min_eig(a, b, c)))

    def form(self, s: int) -> HessianForm:
        rows = [M.getrow(s).tocoo() for M in (self.H11, self.H12, self.H22)]
        cols = sorted(set().union(*(r.col.tolist() for r in rows)))
        entries = {}
        for r in cols:
            a, b, c = (float(M[s, r]) for M in (self.H11, self.H12, self.H22))
            entries[r] = np.array([[a, b], [b, c]])
        return HessianForm(s, entries, self.with_boundary)

    def forms(self) -> list[HessianForm]:
        return [self.form(s) for s in range(self.n_tests)]


def assemble(trial: FESpace, test: TestBasis, with_boundary: bool = True) -> HessianForms:
    """Assemble ``H_rs = [-(d_i phi_r, d_j psi_s)]`` (+ boundary flux term)."""
    if trial.mesh is not test.mesh:
        raise ValueError("trial space and test basis live on different meshes")
    mesh = trial.mesh
    rule = default_rule()
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]  # (M, nq)
    gr = trial.grads(rule.points)                          # (M, nq, nr, 2)
    gs = test.grads(rule.points)                           # (M, nq, ns, 2)
    K = -np.einsum("mq,mqri,mqsj->msrij", w, gr, gs)

    rows = [np.broadcast_to(test.cell_tests[:, :, None], K.shape[:3])]
    cols = [np.broadcast_to(trial.element_dofs[:, None, :], K.shape[:3])]
    vals = [K]

    if with_boundary and mesh.boundary_edge_ids.size:
        bids = mesh.boundary_edge_ids
        normals = mesh.boundary_normals
        owner = mesh.edge_cells[bids, 0]
        local = np.argmax(mesh.cell_edges[owner] == bids[:, None], axis=1)
        xi, gw = GAUSS2
        for k in range(3):
            sel = np.flatnonzero(local == k)
            if sel.size == 0:
                continue
            i, j = (k + 1) % 3, (k + 2) % 3
            bary = np.zeros((len(xi), 3))
            bary[:, i] = 1 - xi
            bary[:, j] = xi
            cells = owner[sel]
            g = lagrange_grads(trial.degree, bary, trial.grad_lambda[cells])  # (B, ng, nr, 2)
            v = test_values(test.degree, bary)                                # (ng, ns)
            L = mesh.edge_lengths[bids[sel]]
            Kb = np.einsum("g,b,bgri,gs,bj->bsrij", gw, L, g, v, normals[sel])
            rows.append(np.broadcast_to(test.cell_tests[cells][:, :, None], Kb.shape[:3]))
            cols.append(np.broadcast_to(trial.element_dofs[cells][:, None, :], Kb.shape[:3]))
            vals.append(Kb)

    shape = (test.n_tests, trial.n_dofs)
    mats = []
    for comp in ((0, 0), (0, 1), (1, 1)):
        r = np.concatenate([x.ravel() for x in rows])
        c = np.concatenate([x.ravel() for x in cols])
        if comp == (0, 1):
            v = np.concatenate([(0.5 * (x[..., 0, 1] + x[..., 1, 0])).ravel() for x in vals])
        else:
            v = np.concatenate([x[..., comp[0], comp[1]].ravel() for x in vals])
        keep = r >= 0
        M = sp.coo_matrix((v[keep], (r[keep], c[keep])), shape=shape).tocsr()
        M.sum_duplicates()
        mats.append(M)
    return HessianForms(trial, test, *mats, with_boundary)


# ------------------------------------------------------------- convexity
@dataclass(frozen=True)
class ConvexityReport:
    is_fe_convex: bool
    worst_index: int
    worst_eigenvalue: float
    min_eigenvalues: np.ndarray = field(repr=False)


def check_fe_convexity(forms: HessianForms, coeffs, tol: float = 1e-9) -> ConvexityReport:
    """FE-convex iff every ``H_s u`` has smallest eigenvalue ``>= -tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    lam = forms.min_eigenvalues(coeffs)
    if lam.size == 0:
        return ConvexityReport(True, -1, np.inf, lam)
    s = int(np.argmin(lam))
    return ConvexityReport(bool(lam[s] >= -tol), s, float(lam[s]), lam)


# -------------------------------------------------------------- stencils
def stencil_values(u, center, h) -> np.ndarray:
    """``V[i, j] = u(a + (i-1) h, b + (j-1) h)`` for a vectorized ``u``."""
    a, b = center
    off = np.array([-h, 0.0, h])
    X, Y = np.meshgrid(a + off, b + off, indexing="ij")
    return np.asarray(u(np.column_stack([X.ravel(), Y.ravel()])), dtype=float).reshape(3, 3)


def _as_stencil(values, h, center):
    if callable(values):
        if h is None:
            raise ValueError("h is required when sampling a function")
        return stencil_values(values, center, h)
    V = np.asarray(values, dtype=float)
    if V.shape != (3, 3):
        raise ValueError("expected a 3x3 array of nodal values")
    return V


def stencil_diagonal(values, h=None, center=(0.0, 0.0)) -> np.ndarray:
    """Second-difference stencil of the P1 Hessian at an interior node of the diagonal mesh.

    ``values[i, j]`` holds ``u(a + (i-1) h, b + (j-1) h)``; a vectorized
    callable is sampled around ``center`` instead.
    """
    V = _as_stencil(values, h, center)
    u = lambda di, dj: V[di + 1, dj + 1]  # noqa: E731
    alpha = u(-1, 0) + u(1, 0) - 2 * u(0, 0)
    beta = 0.5 * (2 * u(0, 0) + u(-1, -1) + u(1, 1)
                  - (u(0, -1) + u(0, 1) + u(-1, 0) + u(1, 0)))
    gamma = u(0, -1) + u(0, 1) - 2 * u(0, 0)
    return np.array([[alpha, beta], [beta, gamma]])


def stencil_union_jack(values, h=None, center=(0.0, 0.0)) -> np.ndarray:
    """Stencil at a node with eight neighbours of the Union Jack mesh."""
    V = _as_stencil(values, h, center)
    u = lambda di, dj: V[di + 1, dj + 1]  # noqa: E731
    alpha = u(-1, 0) + u(1, 0) - 2 * u(0, 0)
    beta = 0.5 * (u(1, 1) + u(-1, -1) - u(1, -1) - u(-1, 1))
    gamma = u(0, -1) + u(0, 1) - 2 * u(0, 0)
    return np.array([[alpha, beta], [beta, gamma]])
