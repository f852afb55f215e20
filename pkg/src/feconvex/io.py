"""Plain-text mesh dumps, DOF vectors, legacy VTK snapshots and JSON records."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .femspace import FESpace
from .mesh import Mesh

# VTK cell types and the local-to-VTK node order of the quadratic triangle
# (VTK lists the midpoints of edges 01, 12, 20; local edge k is opposite vertex k)
VTK_TRIANGLE = 5
VTK_QUADRATIC_TRIANGLE = 22
_VTK_P2_ORDER = [0, 1, 2, 5, 3, 4]


def _fmt(v) -> str:
    return repr(float(v))


# ------------------------------------------------------------ mesh dump
def dump_mesh(mesh: Mesh) -> str:
    """Vertex count and coordinates, then cells (peak first) with their generation."""
    lines = [f"domain {mesh.domain_tag}",
             f"radius {'none' if mesh.radius is None else _fmt(mesh.radius)}",
             f"vertices {mesh.n_vertices}"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in mesh.points]
    lines.append(f"cells {mesh.n_cells}")
    lines += [f"{a} {b} {c} {g}" for (a, b, c), g in zip(mesh.cells, mesh.generation)]
    return "\n".join(lines) + "\n"


def load_mesh(text: str) -> Mesh:
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        head = {ln[0]: ln[1] for ln in lines[:2]}
        if lines[2][0] != "vertices":
            raise ValueError("expected a 'vertices' line")
        nv = int(lines[2][1])
        points = np.array([[float(t) for t in ln] for ln in lines[3: 3 + nv]])
        if lines[3 + nv][0] != "cells":
            raise ValueError("expected a 'cells' line")
        nc = int(lines[3 + nv][1])
        rows = np.array([[int(t) for t in ln] for ln in lines[4 + nv: 4 + nv + nc]], dtype=np.int64)
    except (IndexError, KeyError) as exc:
        raise ValueError(f"truncated mesh dump: {exc}") from None
    if points.shape != (nv, 2) or rows.shape != (nc, 4):
        raise ValueError("mesh dump has inconsistent counts")
    radius = None if head.get("radius", "none") == "none" else float(head["radius"])
    return Mesh(points, rows[:, :3], rows[:, 3], head.get("domain", "polygon"), radius)


def write_mesh(mesh: Mesh, path) -> Path:
    path = Path(path)
    path.write_text(dump_mesh(mesh))
    return path


def read_mesh(path) -> Mesh:
    return load_mesh(Path(path).read_text())


# ------------------------------------------------------------ DOF vectors
def write_dofs(coeffs, path) -> Path:
    """One value per line."""
    path = Path(path)
    path.write_text("".join(f"{_fmt(v)}\n" for v in np.asarray(coeffs, dtype=float)))
    return path


def read_dofs(path) -> np.ndarray:
    text = Path(path).read_text().replace(",", "\n")
    return np.array([float(t) for t in text.split()])


# ------------------------------------------------------------ VTK
def vtk_text(space: FESpace, coeffs=None, cell_data: dict | None = None,
             title: str = "feconvex") -> str:
    """Legacy ASCII unstructured grid; P2 spaces use quadratic triangles."""
    mesh = space.mesh
    pts = space.dof_points
    if space.degree == 2:
        conn, ctype = space.element_dofs[:, _VTK_P2_ORDER], VTK_QUADRATIC_TRIANGLE
    else:
        conn, ctype = space.element_dofs, VTK_TRIANGLE
    npc = conn.shape[1]
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {len(pts)} double"]
    out += [f"{x:.10g} {y:.10g} 0" for x, y in pts]
    out.append(f"CELLS {len(conn)} {len(conn) * (npc + 1)}")
    out += [f"{npc} " + " ".join(map(str, row)) for row in conn]
    out.append(f"CELL_TYPES {len(conn)}")
    out += [str(ctype)] * len(conn)
    if coeffs is not None:
        u = np.asarray(coeffs, dtype=float)
        if u.shape != (space.n_dofs,):
            raise ValueError("coefficient vector does not match the space")
        out += [f"POINT_DATA {len(pts)}", "SCALARS u double 1", "LOOKUP_TABLE default"]
        out += [f"{v:.10g}" for v in u]
    if cell_data:
        out.append(f"CELL_DATA {mesh.n_cells}")
        for name, vals in cell_data.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (mesh.n_cells,):
                raise ValueError(f"cell field {name!r} has the wrong length")
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [f"{v:.10g}" for v in vals]
    return "\n".join(out) + "\n"


def write_vtk(space: FESpace, path, coeffs=None, cell_data=None, title="feconvex") -> Path:
    path = Path(path)
    path.write_text(vtk_text(space, coeffs, cell_data, title))
    return path


# ------------------------------------------------------------ JSON
def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(record: dict, path) -> Path:
    """Write ``record`` with non-finite floats as ``null``."""
    path = Path(path)
    path.write_text(json.dumps(_jsonable(record), indent=2, sort_keys=True) + "\n")
    return path
