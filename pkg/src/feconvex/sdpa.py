"""SDPA sparse format (``.dat-s``) for :class:`~feconvex.solver.ConeProgram`.

The file describes ``min c'x  s.t.  F1 x1 + ... + Fm xm - F0 >= 0`` over a
block-diagonal matrix space. A cone program ``h - G x in K`` maps to
``Fi = -G[:, i]`` and ``F0 = -h``. The nonnegative rows go into one diagonal
(LP) block, followed by every PSD block on its own. Equalities ``a x = b``
are written as the inequality pairs ``a x - b >= 0`` and ``b - a x >= 0`` at
the end of the LP block, and a ``* equality pairs: p`` comment lets the
reader turn them back into equalities. Other readers simply see the pairs.

Values are written with ``repr`` so that export -> parse -> export is
byte-identical.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .solver import ConeProgram

_PAIRS = re.compile(r"^\*\s*equality pairs:\s*(\d+)\s*$")


def _fmt(v) -> str:
    return repr(float(v))


def _row_layout(prog: ConeProgram):
    """Block number, row and column (1-based) of every cone row, plus an
    upper-triangle mask; LP rows sit in block 1."""
    L = prog.l + 2 * prog.A.shape[0]
    diag = np.arange(1, L + 1)
    blk, ii, jj = [np.ones(L, dtype=np.int64)], [diag], [diag]
    nxt = 2 if L else 1
    for k, cnt in prog.psd:
        i, j = np.divmod(np.arange(k * k), k)
        blk.append(np.repeat(np.arange(nxt, nxt + cnt), k * k))
        ii.append(np.tile(i + 1, cnt))
        jj.append(np.tile(j + 1, cnt))
        nxt += cnt
    blk, ii, jj = (np.concatenate(a).astype(np.int64) for a in (blk, ii, jj))
    return blk, ii, jj, ii <= jj


def block_struct(prog: ConeProgram) -> list[int]:
    L = prog.l + 2 * prog.A.shape[0]
    out = [-L] if L else []
    for k, cnt in prog.psd:
        out.extend([k] * cnt)
    return out


def to_sdpa(prog: ConeProgram) -> str:
    """Render ``prog`` as SDPA sparse text."""
    A = prog.A.tocsr()
    G = sp.vstack([prog.G[: prog.l], -A, A, prog.G[prog.l:]], format="csr")
    h = np.concatenate([prog.h[: prog.l], -prog.b, prog.b, prog.h[prog.l:]])
    blk, ii, jj, upper = _row_layout(prog)
    struct = block_struct(prog)

    lines = ['"feconvex cone program"', f"* equality pairs: {A.shape[0]}",
             str(prog.n), str(len(struct)), " ".join(map(str, struct)),
             " ".join(_fmt(v) for v in prog.c)]

    F = (-G).tocoo()
    keep = upper[F.row] & (F.data != 0)
    rows, mat, val = F.row[keep], F.col[keep] + 1, F.data[keep]
    r0 = np.flatnonzero(upper & (h != 0))
    rows = np.concatenate([r0, rows])
    mat = np.concatenate([np.zeros(len(r0), dtype=np.int64), mat])
    val = np.concatenate([-h[r0], val])
    order = np.lexsort((jj[rows], ii[rows], blk[rows], mat))
    for r, m_, v in zip(rows[order], mat[order], val[order]):
        lines.append(f"{m_} {blk[r]} {ii[r]} {jj[r]} {_fmt(v)}")
    return "\n".join(lines) + "\n"


def write_sdpa(prog: ConeProgram, path) -> Path:
    path = Path(path)
    path.write_text(to_sdpa(prog))
    return path


def parse_sdpa(text: str) -> ConeProgram:
    """Parse SDPA sparse text into a cone program.

    Consecutive PSD blocks of equal size form one group; diagonal blocks are
    concatenated into the nonnegative part.
    """
    lines = text.splitlines()
    pairs = 0
    start = 0
    while start < len(lines) and (not lines[start].strip() or lines[start].lstrip()[0] in '"*'):
        m = _PAIRS.match(lines[start].strip())
        if m:
            pairs = int(m.group(1))
        start += 1
    body = re.sub(r"[,{}()]", " ", " ".join(lines[start:]))
    tok = body.split()
    try:
        n, nb = int(tok[0]), int(tok[1])
        struct = [int(float(t)) for t in tok[2: 2 + nb]]
        c = np.array([float(t) for t in tok[2 + nb: 2 + nb + n]])
        rest = tok[2 + nb + n:]
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed SDPA header: {exc}") from None
    if len(struct) != nb or len(c) != n or any(s == 0 for s in struct):
        raise ValueError("malformed SDPA header")
    if len(rest) % 5:
        raise ValueError("entry section is not a multiple of 5 fields")

    # row offset of every block: LP blocks first, then PSD blocks in order
    offset = np.zeros(nb + 1, dtype=np.int64)
    L = sum(-s for s in struct if s < 0)
    lp_off, psd_off = 0, L
    for b, s in enumerate(struct, start=1):
        if s < 0:
            offset[b], lp_off = lp_off, lp_off - s
        else:
            offset[b], psd_off = psd_off, psd_off + s * s
    size = np.array([0] + struct)

    E = np.array(rest, dtype=float).reshape(-1, 5) if rest else np.zeros((0, 5))
    mat, b, i, j = (E[:, k].astype(np.int64) for k in range(4))
    v = E[:, 4]
    if np.any((b < 1) | (b > nb)) or np.any((mat < 0) | (mat > n)):
        raise ValueError("entry refers to an unknown block or matrix")
    k = np.abs(size[b])
    if np.any((i < 1) | (j < 1) | (i > k) | (j > k)):
        raise ValueError("entry index outside its block")
    lp = size[b] < 0
    if np.any(lp & (i != j)):
        raise ValueError("off-diagonal entry in a diagonal block")
    lo, hi = np.minimum(i, j) - 1, np.maximum(i, j) - 1
    r1 = np.where(lp, offset[b] + lo, offset[b] + lo * k + hi)
    r2 = np.where(lp, r1, offset[b] + hi * k + lo)
    dup = r2 != r1
    rows = np.concatenate([r1, r2[dup]])
    mats = np.concatenate([mat, mat[dup]])
    vals = np.concatenate([v, v[dup]])
    M = L + sum(s * s for s in struct if s > 0)
    const = mats == 0
    h = -np.bincount(rows[const], weights=vals[const], minlength=M)
    G = -sp.csr_matrix((vals[~const], (rows[~const], mats[~const] - 1)), shape=(M, n))

    psd = []
    for s in struct:
        if s > 0:
            if psd and psd[-1][0] == s:
                psd[-1][1] += 1
            else:
                psd.append([s, 1])

    if pairs:
        if 2 * pairs > L:
            raise ValueError("more equality pairs than diagonal rows")
        l = L - 2 * pairs
        A = -G[l: l + pairs]
        b_ = -h[l: l + pairs]
        if (G[l + pairs: L] - A).count_nonzero() or np.any(h[l + pairs: L] != b_):
            raise ValueError("equality pair rows are not negatives of each other")
        keep = np.r_[0:l, L:M]
        return ConeProgram(c, G[keep], h[keep], l, [tuple(p) for p in psd], A, b_)
    return ConeProgram(c, G, h, L, [tuple(p) for p in psd])


def read_sdpa(path) -> ConeProgram:
    return parse_sdpa(Path(path).read_text())
