"""Conforming triangular meshes, structured patterns and newest-vertex bisection.

Cells are stored with their *peak* vertex first: the refinement edge of a cell
is always the edge opposite local vertex 0, i.e. ``(cells[:, 1], cells[:, 2])``.
Local edge ``k`` of a cell is the edge opposite local vertex ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

PATTERNS = ("diagonal", "chevron", "crisscross", "union_jack")
DOMAIN_TAGS = ("unit_square", "rectangle", "disk", "polygon")


@dataclass(frozen=True)
class Vertex:
    id: int
    coords: tuple[float, float]


@dataclass(frozen=True)
class Element:
    id: int
    vertex_ids: tuple[int, int, int]
    refinement_edge: int
    generation: int


@dataclass(frozen=True)
class Edge:
    id: int
    vertex_ids: tuple[int, int]
    adjacent_element_ids: tuple[int, ...]
    outward_normal: tuple[float, float] | None

    @property
    def is_boundary(self) -> bool:
        return len(self.adjacent_element_ids) == 1


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Mesh:
    """Immutable 2D simplicial mesh.

    Parameters
    ----------
    points : (V, 2) array of vertex coordinates.
    cells : (M, 3) integer array, peak vertex first.
    generation : (M,) bisection depth of each cell, zeros by default.
    domain_tag : one of ``DOMAIN_TAGS``.
    radius : disk radius, only meaningful for ``domain_tag == "disk"``.
    """

    def __init__(self, points, cells, generation=None, domain_tag="polygon",
                 radius=None):
        points = np.asarray(points, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ValueError("points must have shape (V, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must have shape (M, 3)")
        if not np.all(np.isfinite(points)):
            raise ValueError("vertex coordinates must be finite")
        if cells.size and (cells.min() < 0 or cells.max() >= len(points)):
            raise ValueError("cell references unknown vertex")
        if domain_tag not in DOMAIN_TAGS:
            raise ValueError(f"unknown domain tag {domain_tag!r}")
        # keep the peak in slot 0, fix orientation by swapping the other two
        p = points[cells]
        det = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
               - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
        if np.any(det == 0.0):
            raise ValueError("degenerate (zero area) cell")
        neg = det < 0
        cells[neg, 1], cells[neg, 2] = cells[neg, 2].copy(), cells[neg, 1].copy()
        if generation is None:
            generation = np.zeros(len(cells), dtype=np.int64)
        self.points = _frozen(points)
        self.cells = _frozen(cells)
        self.generation = _frozen(np.asarray(generation, dtype=np.int64))
        self.domain_tag = domain_tag
        self.radius = radius
        self._build_edges()

    def _build_edges(self):
        c = self.cells
        local = np.stack([c[:, [1, 2]], c[:, [2, 0]], c[:, [0, 1]]], axis=1)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        cell_edges = inverse.reshape(-1, 3)
        edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
        owner = np.repeat(np.arange(len(c)), 3)
        order = np.argsort(inverse, kind="stable")
        counts = np.bincount(inverse, minlength=len(edges))
        if np.any(counts > 2):
            raise ValueError("non-manifold mesh: edge shared by more than two cells")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        edge_cells[:, 0] = owner[order[starts]]
        two = counts == 2
        edge_cells[two, 1] = owner[order[starts[two] + 1]]
        self.edges = _frozen(edges)
        self.cell_edges = _frozen(cell_edges)
        self.edge_cells = _frozen(edge_cells)

    # ------------------------------------------------------------------ sizes
    @property
    def n_vertices(self) -> int:
        return len(self.points)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    # ------------------------------------------------------------- geometry
    @cached_property
    def areas(self) -> np.ndarray:
        p = self.points[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return _frozen(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.points[self.edges[:, 1]] - self.points[self.edges[:, 0]]
        return _frozen(np.hypot(d[:, 0], d[:, 1]))

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_T: longest edge of each cell."""
        return _frozen(self.edge_lengths[self.cell_edges].max(axis=1))

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def min_angles(self) -> np.ndarray:
        p = self.points[self.cells]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return _frozen(np.min(angles, axis=0))

    @cached_property
    def boundary_edge_ids(self) -> np.ndarray:
        return _frozen(np.flatnonzero(self.edge_cells[:, 1] < 0))

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edge_ids].ravel()] = True
        return _frozen(mask)

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        """Outward unit normals of the boundary edges (ordered as ``boundary_edge_ids``)."""
        ids = self.boundary_edge_ids
        a = self.points[self.edges[ids, 0]]
        b = self.points[self.edges[ids, 1]]
        cell = self.edge_cells[ids, 0]
        # vertex of the owning cell not on the edge
        local = np.argmax(self.cell_edges[cell] == ids[:, None], axis=1)
        opp = self.points[self.cells[cell, local]]
        t = b - a
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1)[:, None]
        flip = ((a - opp) * n).sum(1) < 0
        n[flip] *= -1.0
        return _frozen(n)

    def domain_area(self) -> float:
        """Area enclosed by the boundary polygon (shoelace over boundary edges)."""
        ids = self.boundary_edge_ids
        a = self.points[self.edges[ids, 0]]
        b = self.points[self.edges[ids, 1]]
        n = self.boundary_normals
        # orient every edge counter-clockwise: outward normal is the right-hand normal
        t = b - a
        ccw = (t[:, 1] * n[:, 0] - t[:, 0] * n[:, 1]) > 0
        a, b = np.where(ccw[:, None], a, b), np.where(ccw[:, None], b, a)
        return float(0.5 * np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))

    # ------------------------------------------------------------- records
    def vertex(self, i: int) -> Vertex:
        x, y = self.points[i]
        return Vertex(int(i), (float(x), float(y)))

    def element(self, i: int) -> Element:
        a, b, c = self.cells[i]
        return Element(int(i), (int(a), int(b), int(c)), 0, int(self.generation[i]))

    def edge(self, i: int) -> Edge:
        adj = tuple(int(c) for c in self.edge_cells[i] if c >= 0)
        normal = None
        if len(adj) == 1:
            k = int(np.searchsorted(self.boundary_edge_ids, i))
            nx, ny = self.boundary_normals[k]
            normal = (float(nx), float(ny))
        a, b = self.edges[i]
        return Edge(int(i), (int(a), int(b)), adj, normal)

    def __repr__(self):
        return (f"Mesh({self.n_vertices} vertices, {self.n_cells} cells, "
                f"{self.n_edges} edges, domain={self.domain_tag})")


def boundary(mesh: Mesh) -> list[Edge]:
    """Boundary edges with outward unit normals."""
    return [mesh.edge(int(i)) for i in mesh.boundary_edge_ids]


def _hanging_nodes(mesh: Mesh, tol=1e-12) -> bool:
    ids = mesh.boundary_edge_ids
    a = mesh.points[mesh.edges[ids, 0]]
    b = mesh.points[mesh.edges[ids, 1]]
    scale = mesh.edge_lengths[ids]
    for start in range(0, len(ids), 256):
        sl = slice(start, start + 256)
        t = (b[sl] - a[sl])[:, None, :]
        rel = mesh.points[None, :, :] - a[sl][:, None, :]
        L2 = (t ** 2).sum(-1)
        s = (rel * t).sum(-1) / L2
        cross = np.abs(rel[..., 0] * t[..., 1] - rel[..., 1] * t[..., 0]) / np.sqrt(L2)
        inside = (s > tol) & (s < 1 - tol) & (cross <= tol * scale[sl][:, None])
        if inside.any():
            return True
    return False


def is_conforming(mesh: Mesh, rtol=1e-10) -> bool:
    """Edge-adjacency, hanging-node and area-coverage check."""
    counts = (mesh.edge_cells >= 0).sum(1)
    if np.any(counts < 1) or np.any(counts > 2):
        return False
    if np.any(mesh.areas <= 0):
        return False
    if _hanging_nodes(mesh):
        return False
    if mesh.domain_tag == "disk":
        r = np.linalg.norm(mesh.points[mesh.edges[mesh.boundary_edge_ids]], axis=-1)
        if not np.allclose(r, mesh.radius, rtol=0, atol=1e-12 * max(1.0, mesh.radius)):
            return False
    total = mesh.areas.sum()
    return abs(total - mesh.domain_area()) <= rtol * abs(total)


# ---------------------------------------------------------------- builders
def _longest_edge_first(points, cells):
    """Rotate each cell so that its longest edge is the refinement edge."""
    cells = np.asarray(cells, dtype=np.int64)
    p = points[cells]
    lengths = np.stack([np.linalg.norm(p[:, (k + 2) % 3] - p[:, (k + 1) % 3], axis=1)
                        for k in range(3)], axis=1)
    # ties broken toward the lowest local index; relative slack absorbs rounding
    top = lengths.max(axis=1, keepdims=True)
    peak = np.argmax(lengths >= top * (1 - 1e-12), axis=1)
    idx = (peak[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(cells, idx, axis=1)


def structured_mesh(pattern: str, n: int, rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Regular mesh of a rectangle ``(x0, y0, x1, y1)`` with ``n`` squares per side.

    ``diagonal`` splits every square along its lower-left/upper-right
    diagonal, ``chevron`` alternates the diagonal direction between columns,
    ``union_jack`` alternates it so that diagonals radiate from the even
    vertices, and ``crisscross`` adds a centre vertex and both diagonals.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    x0, y0, x1, y1 = map(float, rect)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    points = [np.column_stack([X.ravel(), Y.ravel()])]

    def node(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            ll, lr, ur, ul = node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)
            if pattern == "diagonal":
                slash = True
            elif pattern == "chevron":
                slash = i % 2 == 0
            elif pattern == "union_jack":
                slash = (i + j) % 2 == 0
            else:
                slash = None
            if slash is None:
                c = (n + 1) ** 2 + j * n + i
                cells += [(ll, lr, c), (lr, ur, c), (ur, ul, c), (ul, ll, c)]
            elif slash:
                cells += [(ll, lr, ur), (ll, ur, ul)]
            else:
                cells += [(ll, lr, ul), (lr, ur, ul)]
    if pattern == "crisscross":
        cx = 0.5 * (xs[:-1] + xs[1:])
        cy = 0.5 * (ys[:-1] + ys[1:])
        CX, CY = np.meshgrid(cx, cy)
        points.append(np.column_stack([CX.ravel(), CY.ravel()]))
    points = np.vstack(points)
    cells = _longest_edge_first(points, cells)
    tag = "unit_square" if (x0, y0, x1, y1) == (0.0, 0.0, 1.0, 1.0) else "rectangle"
    return Mesh(points, cells, domain_tag=tag)


def disk_mesh(radius: float = 1.0, refinement_level: int = 0) -> Mesh:
    """Polygonal disk mesh.

    Level 0 is the inscribed square split into four triangles at the centre;
    each further level applies two rounds of uniform bisection, new boundary
    vertices being projected radially onto the circle.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if int(refinement_level) != refinement_level or refinement_level < 0:
        raise ValueError("refinement level must be a non-negative integer")
    pts = np.array([[0.0, 0.0], [radius, 0.0], [0.0, radius], [-radius, 0.0], [0.0, -radius]])
    cells = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]])
    mesh = Mesh(pts, cells, domain_tag="disk", radius=float(radius))
    for _ in range(2 * int(refinement_level)):
        mesh = bisect(mesh, np.arange(mesh.n_cells))
    return mesh


# --------------------------------------------------------------- bisection
def refinement_closure(mesh: Mesh, marked) -> np.ndarray:
    """Boolean edge mask of all edges that must be split for a conforming result."""
    edge_mark = np.zeros(mesh.n_edges, dtype=bool)
    edge_mark[mesh.cell_edges[marked, 0]] = True
    ce = mesh.cell_edges
    while True:
        touched = edge_mark[ce].any(axis=1)
        need = touched & ~edge_mark[ce[:, 0]]
        if not need.any():
            return edge_mark
        edge_mark[ce[need, 0]] = True


def bisect(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of the marked cells plus conforming closure."""
    return bisect_with_parents(mesh, marked)[0]


def bisect_with_parents(mesh: Mesh, marked):
    """Like :func:`bisect`, also returning the parent cell id of every new cell."""
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    if marked.size == 0:
        return mesh, np.arange(mesh.n_cells)
    if marked.min() < 0 or marked.max() >= mesh.n_cells:
        bad = marked[(marked < 0) | (marked >= mesh.n_cells)]
        raise KeyError(f"unknown element id(s): {bad.tolist()}")
    edge_mark = refinement_closure(mesh, marked)
    split = np.flatnonzero(edge_mark)
    mids = 0.5 * (mesh.points[mesh.edges[split, 0]] + mesh.points[mesh.edges[split, 1]])
    if mesh.domain_tag == "disk":
        on_bdry = mesh.edge_cells[split, 1] < 0
        r = np.linalg.norm(mids[on_bdry], axis=1)
        mids[on_bdry] *= (mesh.radius / r)[:, None]
    midpoint = {}
    base = mesh.n_vertices
    for k, e in enumerate(split):
        a, b = mesh.edges[e]
        midpoint[(int(a), int(b))] = base + k

    def mid(a, b):
        return midpoint.get((a, b) if a < b else (b, a))

    new_cells = []
    new_gen = []
    parent = []

    def refine(cell, gen, origin):
        p, a, b = cell
        m = mid(a, b)
        if m is None:
            new_cells.append(cell)
            new_gen.append(gen)
            parent.append(origin)
            return
        refine((m, b, p), gen + 1, origin)
        refine((m, p, a), gen + 1, origin)

    cells = mesh.cells.tolist()
    gens = mesh.generation.tolist()
    touched = edge_mark[mesh.cell_edges].any(axis=1)
    for t in range(mesh.n_cells):
        if touched[t]:
            refine(tuple(cells[t]), gens[t], t)
        else:
            new_cells.append(tuple(cells[t]))
            new_gen.append(gens[t])
            parent.append(t)
    points = np.vstack([mesh.points, mids])
    out = Mesh(points, new_cells, new_gen, domain_tag=mesh.domain_tag, radius=mesh.radius)
    return out, np.asarray(parent, dtype=np.int64)


def refine_marked(mesh: Mesh, marked, bisections: int = 1) -> Mesh:
    """Bisect every marked cell ``bisections`` times (descendants of marked
    cells are re-marked after each pass), keeping the mesh conforming."""
    marked = np.unique(np.asarray(marked, dtype=np.int64))
    for _ in range(bisections):
        if marked.size == 0:
            break
        mesh, parent = bisect_with_parents(mesh, marked)
        hit = np.zeros(len(parent), dtype=bool)
        hit[np.flatnonzero(np.isin(parent, marked))] = True
        marked = np.flatnonzero(hit)
    return mesh


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    """Bisect every cell ``times`` times."""
    for _ in range(times):
        mesh = bisect(mesh, np.arange(mesh.n_cells))
    return mesh


def locate(mesh: Mesh, points, tol=1e-12) -> np.ndarray:
    """Index of a cell containing each point (lowest id on ties), -1 if outside."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = mesh.points[mesh.cells]
    out = np.full(len(pts), -1, dtype=np.int64)
    x0 = p[:, 0]
    d1 = p[:, 1] - x0
    d2 = p[:, 2] - x0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    for i, q in enumerate(pts):
        r = q - x0
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        inside = (l1 >= -tol) & (l2 >= -tol) & (1 - l1 - l2 >= -tol)
        hit = np.flatnonzero(inside)
        if hit.size:
            out[i] = hit[0]
    return out
