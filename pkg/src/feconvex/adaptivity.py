"""SOLVE -> ESTIMATE -> MARK -> REFINE with the gradient-jump indicator."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .femspace import GAUSS2, FESpace, TestBasis, lagrange_grads
from .mesh import Mesh, refine_marked, uniform_refine
from .problems import BenchmarkProblem, error_norms
from .solver import SolverConfig, SolverResult, solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorIndicators:
    eta: np.ndarray

    @property
    def eta_max(self) -> float:
        return float(self.eta.max()) if self.eta.size else 0.0

    @property
    def total(self) -> float:
        return float(np.sqrt(np.sum(self.eta ** 2)))


def _edge_gradients(space: FESpace, coeffs, cells, local, xi):
    """Gradient of ``u`` on ``cells`` at parameters ``xi`` along their local edge.

    The parameter runs from the lower to the higher global vertex id of the
    edge, so both neighbours of an interior edge see the same physical points.
    """
    mesh = space.mesh
    c = np.asarray(coeffs, dtype=float)
    out = np.empty((len(cells), len(xi), 2))
    verts = mesh.cells[cells]
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        for flip in (False, True):
            ascending = verts[:, i] < verts[:, j]
            sel = np.flatnonzero((local == k) & (ascending != flip))
            if sel.size == 0:
                continue
            bary = np.zeros((len(xi), 3))
            first, second = (i, j) if not flip else (j, i)
            bary[:, first] = 1 - xi
            bary[:, second] = xi
            t = cells[sel]
            g = lagrange_grads(space.degree, bary, space.grad_lambda[t])    # (B, nq, nloc, 2)
            out[sel] = np.einsum("bk,bqkd->bqd", c[space.element_dofs[t]], g)
    return out


def estimate(mesh: Mesh, space: FESpace, coeffs) -> ErrorIndicators:
    """``eta_T^2 = h_T * sum over interior edges S of T of int_S |[grad u]|^2``.

    The full jump counts for both neighbours; boundary edges contribute zero.
    """
    if space.mesh is not mesh:
        raise ValueError("space does not live on this mesh")
    interior = np.flatnonzero(mesh.edge_cells[:, 1] >= 0)
    eta2 = np.zeros(mesh.n_cells)
    if interior.size:
        xi, w = GAUSS2
        sides = []
        for side in (0, 1):
            t = mesh.edge_cells[interior, side]
            local = np.argmax(mesh.cell_edges[t] == interior[:, None], axis=1)
            sides.append(_edge_gradients(space, coeffs, t, local, xi))
        jump = sides[0] - sides[1]
        L = mesh.edge_lengths[interior]
        integral = L * np.einsum("q,eq->e", w, np.sum(jump ** 2, axis=2))
        for side in (0, 1):
            np.add.at(eta2, mesh.edge_cells[interior, side], integral)
    eta2 *= mesh.diameters
    return ErrorIndicators(np.sqrt(eta2))


def mark(indicators: ErrorIndicators, theta: float = 0.7) -> np.ndarray:
    """Ids of all cells with ``eta_T >= theta * eta_max`` (empty if ``eta_max = 0``)."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    eta = indicators.eta
    if eta.size == 0 or indicators.eta_max <= 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(eta >= theta * indicators.eta_max)


# ------------------------------------------------------------ driver
@dataclass
class AdaptConfig:
    degree: int = 2
    pattern: str = "crisscross"
    n: int = 2
    disk_level: int = 2
    include_boundary: bool = True
    theta: float = 0.7
    bisections: int = 2             # bisections applied to each marked cell
    mode: str = "adaptive"          # or "uniform": two bisections of every cell per step
    solver: SolverConfig = field(default_factory=SolverConfig)
    zero_tol: float = 1e-6          # eta_max <= zero_tol * max(1, max|u|) counts as zero

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        if self.mode not in ("adaptive", "uniform"):
            raise ValueError("mode must be 'adaptive' or 'uniform'")


@dataclass
class IterationRecord:
    iteration: int
    elements: int
    dofs: int
    status: str
    objective: float
    wall_seconds: float
    eta_max: float
    l2_error: float | None = None
    linf_error: float | None = None


@dataclass
class IterationState:
    """Everything produced in one pass, handed to the per-iteration callback."""

    record: IterationRecord
    mesh: Mesh
    space: FESpace
    coeffs: np.ndarray
    indicators: ErrorIndicators
    result: SolverResult


@dataclass
class AdaptiveRun:
    records: list = field(default_factory=list)
    converged: bool = False
    final: IterationState | None = None

    @property
    def elements(self) -> list[int]:
        return [r.elements for r in self.records]


class AdaptiveFailure(RuntimeError):
    """A solve did not reach ``optimal``; ``run`` holds the iterations so far."""

    def __init__(self, message, run: AdaptiveRun, state: IterationState | None = None):
        super().__init__(message)
        self.run = run
        self.state = state


def adapt(problem: BenchmarkProblem, iterations: int, config: AdaptConfig | None = None,
          mesh: Mesh | None = None, callback=None) -> AdaptiveRun:
    """Run ``iterations`` solves, refining between consecutive ones.

    ``callback(state)`` is called after every solve (for snapshots). Stops
    early with ``converged = True`` when the indicator vanishes up to solver
    accuracy (``config.zero_tol``, relative to the size of ``u``).
    """
    cfg = config or AdaptConfig()
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if mesh is None:
        mesh = problem.initial_mesh(cfg.pattern, cfg.n, cfg.disk_level)
    run = AdaptiveRun()
    for it in range(iterations):
        t0 = time.perf_counter()
        space = FESpace(mesh, cfg.degree)
        test = TestBasis(mesh, cfg.include_boundary, degree=cfg.degree)
        sdp = problem.build(space, test)
        result = solve(sdp.to_cone_program(), cfg.solver)
        wall = time.perf_counter() - t0
        u = sdp.u_part(result.x)
        ind = estimate(mesh, space, u)
        rec = IterationRecord(it, mesh.n_cells, space.n_dofs, result.status,
                              result.primal_objective, wall, ind.eta_max)
        if problem.exact_solution is not None and np.all(np.isfinite(u)):
            err = error_norms(space, u, problem.exact_solution)
            rec.l2_error, rec.linf_error = err.l2, err.linf
        state = IterationState(rec, mesh, space, u, ind, result)
        run.records.append(rec)
        run.final = state
        log.info("iteration %d: %d elements, %d dofs, %s, eta_max %.3e",
                 it, rec.elements, rec.dofs, rec.status, rec.eta_max)
        if callback is not None:
            callback(state)
        if result.status != "optimal":
            raise AdaptiveFailure(f"solver returned {result.status} at iteration {it}", run, state)
        if ind.eta_max <= cfg.zero_tol * max(1.0, float(np.abs(u).max(initial=0.0))):
            run.converged = True
            break
        if it + 1 < iterations:
            if cfg.mode == "uniform":
                mesh = uniform_refine(mesh, 2)
            else:
                mesh = refine_marked(mesh, mark(ind, cfg.theta), cfg.bisections)
    return run
