"""Primal-dual interior-point solver for LPs with many small PSD blocks.

Problem form (``s`` ranges over the product cone K = R^l_+ x S^k1 x S^k2 ...)::

    minimize    c'x
    subject to  A x = b
                G x + s = h,   s in K

with dual ``maximize -b'y - h'z  s.t.  A'y + G'z + c = 0, z in K``.

PSD blocks are stored densely (``k*k`` entries, row-major) inside ``G``/``h``
and are grouped by size so that all cone operations are batched numpy calls.
The iteration is a Mehrotra predictor-corrector on the homogeneous self-dual
embedding with Nesterov-Todd scaling; each step factors one sparse
quasi-definite KKT system with the reduced Hessian ``G' W^-1 W^-T G``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

STATUSES = ("optimal", "infeasible", "unbounded", "max_iter", "numerical_failure")


@dataclass
class ConeProgram:
    """``min c'x  s.t.  A x = b,  h - G x in R^l_+ x prod S^k``.

    ``psd`` lists ``(k, count)`` groups in the order their rows follow the
    ``l`` nonnegative rows of ``G``.
    """

    c: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    l: int
    psd: list[tuple[int, int]]
    A: sp.csr_matrix | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = len(self.c)
        self.G = sp.csr_matrix(self.G, shape=(self.G.shape[0], n))
        self.h = np.asarray(self.h, dtype=float)
        if self.A is None:
            self.A = sp.csr_matrix((0, n))
            self.b = np.zeros(0)
        self.A = sp.csr_matrix(self.A)
        self.b = np.asarray(self.b, dtype=float)
        self.psd = [(int(k), int(m)) for k, m in self.psd if m > 0]
        m = self.l + sum(k * k * cnt for k, cnt in self.psd)
        if self.G.shape != (m, n) or self.h.shape != (m,):
            raise ValueError(f"G/h do not match cone dimension {m} and {n} variables")
        if self.A.shape[1] != n or self.A.shape[0] != len(self.b):
            raise ValueError("A/b shapes inconsistent")

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return self.G.shape[0]

    @property
    def degree(self) -> int:
        return self.l + sum(k * cnt for k, cnt in self.psd)

    def split(self, v):
        """Views of a cone vector: LP part and one ``(count, k, k)`` array per group."""
        parts = [v[: self.l]]
        off = self.l
        for k, cnt in self.psd:
            parts.append(v[off: off + k * k * cnt].reshape(cnt, k, k))
            off += k * k * cnt
        return parts


@dataclass
class SolverConfig:
    tol_primal: float = 1e-7
    tol_dual: float = 1e-7
    tol_gap: float = 1e-7
    max_iterations: int = 200
    verbosity: int = 0
    regularization: float = 1e-9
    step_fraction: float = 0.99
    refinement_steps: int = 2

    def __post_init__(self):
        if min(self.tol_primal, self.tol_dual, self.tol_gap) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolverResult:
    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    primal_objective: float
    dual_objective: float
    residuals: dict
    iterations: int
    history: list = field(default_factory=list, repr=False)

    @property
    def objective(self) -> float:
        return self.primal_objective

    def to_record(self) -> dict:
        return {
            "status": self.status,
            "objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "residuals": dict(self.residuals),
            "iterations": self.iterations,
        }


class SolverError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# ------------------------------------------------------------ presolve
def _independent_rows(A: sp.csr_matrix, b: np.ndarray, tol=1e-10):
    """Indices of a maximal set of independent equality rows (dense pivoted QR)."""
    rows = np.flatnonzero(np.diff(A.indptr) > 0)
    empty = np.setdiff1d(np.arange(A.shape[0]), rows)
    if np.any(np.abs(b[empty]) > tol):
        raise ValueError("inconsistent empty equality row")
    if rows.size <= 1:
        return rows
    D = A[rows].toarray()
    _, R, piv = la.qr(D.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(1.0, diag.max())))
    return np.sort(rows[piv[:rank]])


# ------------------------------------------------------------ cone algebra
class _Scaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^-T s = lambda``.

    PSD blocks: ``W(v) = R' v R`` with ``lambda = R' Z R = R^-1 S R^-T``
    diagonal; LP: ``W(v) = d v`` with ``d = sqrt(s/z)``.
    """

    def __init__(self, prog: ConeProgram, s_fac, z_fac):
        self.prog = prog
        s_lp, z_lp = s_fac[0], z_fac[0]
        self.d = np.sqrt(s_lp / z_lp)
        self.lam_lp = np.sqrt(s_lp * z_lp)
        self.R, self.Rinv, self.lam = [], [], []
        for Ls, Lz in zip(s_fac[1:], z_fac[1:]):
            U, sv, Vt = np.linalg.svd(np.swapaxes(Lz, 1, 2) @ Ls)
            isq = 1.0 / np.sqrt(sv)
            self.R.append(Ls @ np.swapaxes(Vt, 1, 2) * isq[:, None, :])
            self.Rinv.append(isq[:, :, None] * np.swapaxes(U, 1, 2) @ np.swapaxes(Lz, 1, 2))
            self.lam.append(sv)

    # v -> W v (used on z-like vectors)
    def W(self, v):
        p = self.prog.split(v)
        out = [self.d * p[0]]
        out += [np.swapaxes(R, 1, 2) @ V @ R for R, V in zip(self.R, p[1:])]
        return _join(out)

    def WinvT(self, v):
        p = self.prog.split(v)
        out = [p[0] / self.d]
        out += [Ri @ V @ np.swapaxes(Ri, 1, 2) for Ri, V in zip(self.Rinv, p[1:])]
        return _join(out)

    def WT(self, v):
        p = self.prog.split(v)
        out = [self.d * p[0]]
        out += [R @ V @ np.swapaxes(R, 1, 2) for R, V in zip(self.R, p[1:])]
        return _join(out)

    def Winv(self, v):
        p = self.prog.split(v)
        out = [p[0] / self.d]
        out += [np.swapaxes(Ri, 1, 2) @ V @ Ri for Ri, V in zip(self.Rinv, p[1:])]
        return _join(out)

    def lam_vec(self):
        return _join([self.lam_lp] + [_diag_embed(l) for l in self.lam])

    def winvT_matrix(self) -> sp.spmatrix:
        """Sparse block-diagonal matrix of ``v -> W^-T v``."""
        blocks = [sp.diags(1.0 / self.d)] if self.prog.l else []
        for (k, cnt), Ri in zip(self.prog.psd, self.Rinv):
            # (Ri V Ri')_ij = sum_kl Ri_ik Ri_jl V_kl in row-major storage
            data = np.einsum("bik,bjl->bijkl", Ri, Ri).reshape(cnt, k * k, k * k)
            idx = np.arange(cnt)
            blocks.append(sp.bsr_matrix((data, idx, np.arange(cnt + 1)), shape=(cnt * k * k,) * 2))
        if not blocks:
            return sp.csr_matrix((0, 0))
        return sp.block_diag(blocks, format="csr")

    # products in the scaled space, where lambda is diagonal
    def lam_div(self, v):
        """Solve ``lambda o x = v``."""
        p = self.prog.split(v)
        out = [p[0] / self.lam_lp]
        for l, V in zip(self.lam, p[1:]):
            out.append(2.0 * V / (l[:, :, None] + l[:, None, :]))
        return _join(out)

    def step_to_boundary(self, dv):
        """Largest ``a`` with ``lambda + a dv`` in the cone (inf if unbounded)."""
        p = self.prog.split(dv)
        amax = np.inf
        if self.prog.l:
            r = p[0] / self.lam_lp
            if r.min() < 0:
                amax = min(amax, -1.0 / r.min())
        for l, V in zip(self.lam, p[1:]):
            isq = 1.0 / np.sqrt(l)
            M = isq[:, :, None] * V * isq[:, None, :]
            ev = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, 1, 2)))[:, 0]
            if ev.min() < 0:
                amax = min(amax, -1.0 / ev.min())
        return amax


def _diag_embed(l):
    k = l.shape[1]
    out = np.zeros((l.shape[0], k, k))
    idx = np.arange(k)
    out[:, idx, idx] = l
    return out


def _join(parts):
    return np.concatenate([p.reshape(-1) for p in parts]) if parts else np.zeros(0)


def _sym_product(prog, a, b):
    """Jordan product ``a o b`` (``(AB + BA)/2`` on PSD blocks)."""
    pa, pb = prog.split(a), prog.split(b)
    out = [pa[0] * pb[0]]
    for A_, B_ in zip(pa[1:], pb[1:]):
        AB = A_ @ B_
        out.append(0.5 * (AB + np.swapaxes(AB, 1, 2)))
    return _join(out)


def identity(prog: ConeProgram) -> np.ndarray:
    parts = [np.ones(prog.l)]
    for k, cnt in prog.psd:
        parts.append(np.broadcast_to(np.eye(k), (cnt, k, k)))
    return _join(parts)


def cone_min_eig(prog: ConeProgram, v) -> np.ndarray:
    """Smallest eigenvalue of each block (LP entries are 1x1 blocks)."""
    p = prog.split(v)
    out = [p[0]]
    for V in p[1:]:
        out.append(np.linalg.eigvalsh(0.5 * (V + np.swapaxes(V, 1, 2)))[:, 0])
    return np.concatenate(out) if out else np.zeros(0)


def cone_dot(prog, a, b):
    return float(a @ b)


def _factor(prog: ConeProgram, v):
    """Square factors ``v = L L'`` per block (LP: the entries themselves)."""
    p = prog.split(v)
    out = [p[0].copy()]
    for V in p[1:]:
        out.append(np.linalg.cholesky(0.5 * (V + np.swapaxes(V, 1, 2))))
    return out


def _step_to_boundary(prog, fac, dv):
    """Largest ``a`` with ``v + a dv`` in the cone, given factors of ``v``."""
    p = prog.split(dv)
    amax = np.inf
    if prog.l:
        r = p[0] / fac[0]
        if r.min() < 0:
            amax = -1.0 / r.min()
    for L, D in zip(fac[1:], p[1:]):
        Y = np.linalg.solve(L, 0.5 * (D + np.swapaxes(D, 1, 2)))
        M = np.linalg.solve(L, np.swapaxes(Y, 1, 2))
        ev = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, 1, 2)))[:, 0]
        if ev.min() < 0:
            amax = min(amax, -1.0 / ev.min())
    return amax


# ------------------------------------------------------------ KKT solver
class _KKT:
    """Factorization of ``[[Gs'Gs + dI, A'], [A, -dI]]`` with ``Gs = W^-T G``.

    Solves ``A'dy + G'dz = bx, A dx = by, G dx - W'W dz = bz`` through the
    scaled unknown ``W dz``, followed by iterative refinement on the full
    scaled system.
    """

    def __init__(self, prog: ConeProgram, M: sp.spmatrix, reg: float, refine: int):
        self.prog = prog
        self.M = M
        self.Gs = (M @ prog.G).tocsr()
        H = (self.Gs.T @ self.Gs).tocsc()
        n, p = prog.n, prog.A.shape[0]
        self.refine = refine
        scale = max(1.0, float(np.abs(H.diagonal()).max(initial=0.0)))
        try:
            self.lu = self._factor(H, reg)
        except RuntimeError:
            # rank-deficient H whose entries have outgrown the static
            # regularization: retry with a shift relative to its scale
            self.lu = self._factor(H, reg * scale)
        self.n, self.p = n, p

    def _factor(self, H, reg):
        n, p, A = self.prog.n, self.prog.A.shape[0], self.prog.A
        if p:
            K = sp.bmat([[H + reg * sp.eye(n), A.T], [A, -reg * sp.eye(p)]], format="csc")
        else:
            K = (H + reg * sp.eye(n)).tocsc()
        return spla.splu(K, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True},
                         diag_pivot_thresh=0.1)

    def _reduced(self, bx, by, bzs):
        Gs = self.Gs
        sol = self.lu.solve(np.concatenate([bx + Gs.T @ bzs, by]))
        dx, dy = sol[: self.n], sol[self.n:]
        return dx, dy, Gs @ dx - bzs

    def solve_scaled(self, bx, by, bz):
        """Return ``dx, dy, W dz``."""
        A, Gs = self.prog.A, self.Gs
        bzs = self.M @ bz
        dx, dy, wz = self._reduced(bx, by, bzs)
        for _ in range(self.refine):
            r1 = bx - (A.T @ dy + Gs.T @ wz)
            r2 = by - A @ dx
            r3 = bzs - (Gs @ dx - wz)
            ex, ey, ez = self._reduced(r1, r2, r3)
            dx, dy, wz = dx + ex, dy + ey, wz + ez
        return dx, dy, wz


# ------------------------------------------------------------ main loop
def _initial_point(prog: ConeProgram, cfg: SolverConfig):
    m = prog.m
    Dm = sp.eye(m, format="csr")
    kkt = _KKT(prog, Dm, cfg.regularization, cfg.refinement_steps)
    # primal: least squares fit of G x ~ h subject to A x = b
    x, _, zz = kkt.solve_scaled(np.zeros(prog.n), prog.b, prog.h)
    s = -zz
    # dual: minimum-norm z with A'y + G'z = -c
    _, y, z = kkt.solve_scaled(-prog.c, np.zeros(len(prog.b)), np.zeros(m))
    e = identity(prog)
    for v in (s, z):
        if m == 0:
            continue
        shift = -cone_min_eig(prog, v).min()
        if shift >= -1e-8 * max(1.0, np.linalg.norm(v)):
            v += (1.0 + max(shift, 0.0)) * e
    return x, y, s, z


def solve(program: ConeProgram, config: SolverConfig | None = None) -> SolverResult:
    """Solve a cone program; see the module docstring for the problem form."""
    cfg = config or SolverConfig()
    prog = program
    p_orig = prog.A.shape[0]
    keep = _independent_rows(prog.A, prog.b)
    if keep.size != p_orig:
        prog = ConeProgram(prog.c, prog.G, prog.h, prog.l, prog.psd, prog.A[keep], prog.b[keep])
    c, G, h, A, b = prog.c, prog.G, prog.h, prog.A, prog.b
    n, m = prog.n, prog.m
    deg = prog.degree
    nrm = lambda v: float(np.linalg.norm(v))  # noqa: E731
    cnorm, bnorm, hnorm = nrm(c), nrm(b), nrm(h)

    try:
        x, y, s, z = _initial_point(prog, cfg)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"initial KKT factorization failed: {exc}") from exc
    tau = kappa = 1.0
    history = []
    status = "max_iter"
    it = 0
    best = None

    def pack(status_, x_, y_, z_, s_, tau_, res):
        t = tau_ if status_ not in ("infeasible", "unbounded") else 1.0
        xs, ys, zs, ss = x_ / t, y_ / t, z_ / t, s_ / t
        y_full = np.zeros(p_orig)
        y_full[keep] = ys
        return SolverResult(status_, xs, y_full, zs, ss, float(c @ xs), float(-(b @ ys) - h @ zs),
                            res, it, history)

    for it in range(cfg.max_iterations + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = A @ x - b * tau
        rz = s + G @ x - h * tau
        rt = kappa + c @ x + b @ y + h @ z
        gap = float(s @ z)
        mu = (gap + tau * kappa) / (deg + 1)

        pcost = float(c @ x) / tau
        dcost = -float(b @ y + h @ z) / tau
        pres = max(nrm(ry) / tau / (1 + bnorm), nrm(rz) / tau / (1 + hnorm))
        dres = nrm(rx) / tau / (1 + cnorm)
        relgap = gap / tau ** 2 / (1 + min(abs(pcost), abs(dcost)))
        res = {"primal": pres, "dual": dres, "gap": relgap}
        history.append({"iteration": it, "pcost": pcost, "dcost": dcost, "mu": mu,
                        "tau": tau, "kappa": kappa, **res})
        if cfg.verbosity:
            log.info("%3d  pcost % .8e  dcost % .8e  pres %.1e  dres %.1e  gap %.1e",
                     it, pcost, dcost, pres, dres, relgap)
        score = max(pres / cfg.tol_primal, dres / cfg.tol_dual, relgap / cfg.tol_gap)
        if best is None or score < best[0]:
            best = (score, x.copy(), y.copy(), z.copy(), s.copy(), tau, dict(res))
        if pres <= cfg.tol_primal and dres <= cfg.tol_dual and relgap <= cfg.tol_gap:
            status = "optimal"
            break
        # certificates of infeasibility
        hz_by = float(h @ z + b @ y)
        if hz_by < 0:
            pinf = nrm(A.T @ y + G.T @ z) / (-hz_by) / max(1.0, cnorm)
            if pinf <= cfg.tol_primal:
                status = "infeasible"
                res = dict(res, certificate=pinf)
                return pack(status, np.full(n, np.nan), y / -hz_by, z / -hz_by, s, 1.0, res)
        cx = float(c @ x)
        if cx < 0:
            dinf = max(nrm(A @ x) / max(1.0, bnorm), nrm(G @ x + s) / max(1.0, hnorm)) / (-cx)
            if dinf <= cfg.tol_dual:
                status = "unbounded"
                res = dict(res, certificate=dinf)
                return pack(status, x / -cx, np.full(len(b), np.nan), np.full(m, np.nan),
                            s / -cx, 1.0, res)
        if it == cfg.max_iterations:
            break

        try:
            s_fac, z_fac = _factor(prog, s), _factor(prog, z)
            W = _Scaling(prog, s_fac, z_fac)
            kkt = _KKT(prog, W.winvT_matrix(), cfg.regularization, cfg.refinement_steps)
            x1, y1, wz1 = kkt.solve_scaled(-c, b, h)
            z1 = W.Winv(wz1)
            # c'x1 + b'y1 + h'z1 == -||W z1||^2; the explicit form avoids cancellation
            q1 = -float(wz1 @ wz1)
            lam = W.lam_vec()
            lamsq = _sym_product(prog, lam, lam)
            e = identity(prog)

            def direction(sigma, corr_s, corr_t):
                eta = 1.0 - sigma
                rs = -lamsq + sigma * mu * e - corr_s
                rk = -tau * kappa + sigma * mu - corr_t
                us = W.lam_div(rs)
                d1, d2, d3 = -eta * rx, -eta * ry, -eta * rz - W.WT(us)
                x0, y0, wz0 = kkt.solve_scaled(d1, d2, d3)
                z0 = W.Winv(wz0)
                q0 = float(x1 @ d1 - y1 @ d2 - z1 @ d3 - 2.0 * (wz1 @ wz0))
                dtau = (-eta * rt - rk / tau - q0) / (q1 - kappa / tau)
                dx, dy, dz = x0 + dtau * x1, y0 + dtau * y1, z0 + dtau * z1
                dkappa = (rk - kappa * dtau) / tau
                # slack step from the linearized primal equation, so the primal
                # residual contracts exactly whatever the scaling accuracy
                ds = -eta * rz - G @ dx + h * dtau
                return dx, dy, dz, dtau, dkappa, ds

            def max_step(dx, dy, dz, dtau, dkappa, ds):
                a = min(_step_to_boundary(prog, s_fac, ds), _step_to_boundary(prog, z_fac, dz))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkappa < 0:
                    a = min(a, -kappa / dkappa)
                return a

            aff = direction(0.0, 0.0, 0.0)
            a_aff = min(1.0, max_step(*aff))
            sigma = (1.0 - a_aff) ** 3
            corr_s = _sym_product(prog, W.WinvT(aff[5]), W.W(aff[2]))
            step = direction(sigma, corr_s, aff[3] * aff[4])
            alpha = min(1.0, cfg.step_fraction * max_step(*step))
            if alpha < 0.1:
                # the second-order term can wreck centrality near a degenerate
                # solution; fall back to a damped centering step
                step = direction(max(sigma, 0.5), 0.0, 0.0)
                alpha = min(1.0, cfg.step_fraction * max_step(*step))
        except (RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("numerical failure at iteration %d: %s", it, exc)
            status = "numerical_failure"
            break
        if not np.isfinite(alpha) or alpha <= 1e-12:
            status = "numerical_failure"
            break

        dx, dy, dz, dtau, dkappa, ds = step
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            status = "numerical_failure"
            break

    if status == "optimal":
        return pack(status, x, y, z, s, tau, res)
    _, x, y, z, s, tau, res = best
    return pack(status, x, y, z, s, tau, res)


def validate_kkt(program: ConeProgram, result: SolverResult) -> dict:
    """Recompute residuals of a primal-dual pair directly from the program data.

    Returns primal and dual feasibility (relative to ``1 + ||rhs||``), the
    relative duality gap, and the smallest eigenvalue of every slack and
    dual cone block.
    """
    if result.y is None or result.z is None or np.any(np.isnan(result.z)):
        raise ValueError("result carries no dual data")
    prog = program
    x, y, z = result.x, result.y, result.z
    A, b = prog.A, prog.b
    if len(y) != A.shape[0]:
        raise ValueError("dual vector does not match the equality rows")
    slack = prog.h - prog.G @ x
    peq = np.linalg.norm(A @ x - b) / (1 + np.linalg.norm(b)) if A.shape[0] else 0.0
    # cone infeasibility of the slack, measured by its most negative eigenvalue
    s_eig = cone_min_eig(prog, slack)
    z_eig = cone_min_eig(prog, z)
    pcone = max(0.0, -s_eig.min()) / (1 + np.linalg.norm(prog.h)) if s_eig.size else 0.0
    dual = np.linalg.norm(A.T @ y + prog.G.T @ z + prog.c) / (1 + np.linalg.norm(prog.c))
    dcone = max(0.0, -z_eig.min()) if z_eig.size else 0.0
    pobj = float(prog.c @ x)
    dobj = float(-(b @ y) - prog.h @ z)
    gap = abs(pobj - dobj) / (1 + min(abs(pobj), abs(dobj)))
    return {
        "primal": float(max(peq, pcone)),
        "dual": float(max(dual, dcone)),
        "gap": float(gap),
        "complementarity": float(slack @ z),
        "primal_objective": pobj,
        "dual_objective": dobj,
        "min_slack_eigenvalue": float(s_eig.min()) if s_eig.size else np.inf,
        "min_dual_eigenvalue": float(z_eig.min()) if z_eig.size else np.inf,
    }
