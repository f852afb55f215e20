import itertools
from math import factorial

import numpy as np
import pytest

from feconvex.femspace import (FESpace, TestBasis, build_test_basis, build_trial_space, default_rule,
                               interpolate, lattice)
from feconvex.mesh import disk_mesh, structured_mesh, uniform_refine


def exact_monomial_integral(tri, a, b):
    """Exact integral of x^a y^b over a triangle: expand x, y in barycentric
    coordinates and use int lambda^k = 2|T| k1! k2! k3! / (|k| + 2)!."""
    d1, d2 = tri[1] - tri[0], tri[2] - tri[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    total = 0.0
    factors = [tri[:, 0]] * a + [tri[:, 1]] * b
    for choice in itertools.product(range(3), repeat=len(factors)):
        coef = np.prod([f[k] for f, k in zip(factors, choice)]) if factors else 1.0
        k = np.bincount(choice, minlength=3) if factors else np.zeros(3, int)
        total += coef * 2 * area * np.prod([factorial(int(v)) for v in k]) / factorial(int(k.sum()) + 2)
    return total


def test_rule_shape():
    rule = default_rule()
    assert rule.size == 6 and rule.exactness_degree >= 4
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(rule.points.sum(axis=1), 1.0)


@pytest.mark.parametrize("mesh", [structured_mesh("diagonal", 2), disk_mesh(1.0, 1)])
def test_quadrature_exact_to_degree_four(mesh):
    space = FESpace(mesh, 1)
    X, W = space.quadrature()
    for a in range(5):
        for b in range(5 - a):
            got = (W * X[..., 0] ** a * X[..., 1] ** b).sum(axis=1)
            want = [exact_monomial_integral(mesh.points[c], a, b) for c in mesh.cells]
            assert np.allclose(got, want, rtol=1e-12, atol=1e-15), (a, b)


def test_dof_counts():
    m = structured_mesh("diagonal", 1)
    assert build_trial_space(m, 1).n_dofs == 4
    assert build_trial_space(m, 2).n_dofs == 9
    with pytest.raises(ValueError):
        FESpace(m, 3)


def test_dof_kinds_and_shared_edges():
    m = structured_mesh("crisscross", 2)
    V = FESpace(m, 2)
    kinds = [k for _, k in V.dofs]
    assert kinds.count("vertex") == m.n_vertices and kinds.count("edge_midpoint") == m.n_edges
    # the midpoint DOF seen from both sides of an interior edge is the same node
    for e in np.flatnonzero(m.edge_cells[:, 1] >= 0):
        t0, t1 = m.edge_cells[e]
        k0 = list(m.cell_edges[t0]).index(e)
        k1 = list(m.cell_edges[t1]).index(e)
        assert V.element_dofs[t0, 3 + k0] == V.element_dofs[t1, 3 + k1]


def test_p1_partition_of_unity():
    m = structured_mesh("union_jack", 3)
    V = FESpace(m, 1)
    pts = V.physical_points(lattice(5)).reshape(-1, 2)
    assert np.allclose(V.evaluate(np.ones(V.n_dofs), pts), 1.0, atol=1e-14)
    assert np.allclose(V.values(lattice(5)).sum(axis=1), 1.0)


@pytest.mark.parametrize("degree", [1, 2])
def test_linear_reproduction(degree):
    m = structured_mesh("chevron", 3)
    V = FESpace(m, degree)
    u = interpolate(V, lambda x: 3 * x[:, 0] - x[:, 1])
    pts = np.random.default_rng(0).uniform(0.01, 0.99, (50, 2))
    assert np.allclose(V.evaluate(u, pts), 3 * pts[:, 0] - pts[:, 1], atol=1e-13)
    assert np.allclose(V.gradient(u, pts), [3.0, -1.0], atol=1e-12)


def test_quadratic_exact_in_p2():
    m = structured_mesh("crisscross", 2)
    V = FESpace(m, 2)
    f = lambda x: (x[:, 0] + x[:, 1]) ** 2  # noqa: E731
    pts = np.random.default_rng(1).uniform(0, 1, (60, 2))
    assert np.allclose(V.evaluate(interpolate(V, f), pts), f(pts), atol=1e-13)


def test_p2_gradient_matches_finite_differences():
    m = structured_mesh("crisscross", 3)
    V = FESpace(m, 2)
    rng = np.random.default_rng(2)
    u = rng.normal(size=V.n_dofs)
    # keep points well inside cells so both stencil points share the cell
    bary = rng.dirichlet([4, 4, 4], size=100)
    cells = rng.integers(0, m.n_cells, 100)
    pts = np.einsum("pk,pkd->pd", bary, m.points[m.cells[cells]])
    h = 1e-6
    fd = np.column_stack([(V.evaluate(u, pts + d) - V.evaluate(u, pts - d)) / (2 * h)
                          for d in (np.array([h, 0]), np.array([0, h]))])
    assert np.abs(V.gradient(u, pts) - fd).max() < 1e-5


def test_interpolation_examples():
    m = structured_mesh("diagonal", 4)
    assert np.all(interpolate(FESpace(m, 2), lambda x: 0 * x[:, 0]) == 0)
    target = lambda x: (x[:, 1] - 0.5 * x[:, 0] - 0.25) ** 2  # noqa: E731
    V = FESpace(m, 2)
    X, W = V.quadrature()
    err = V.cell_values(interpolate(V, target), default_rule().points) - target(X.reshape(-1, 2)).reshape(W.shape)
    assert np.sqrt((W * err ** 2).sum()) <= 1e-12
    V1 = FESpace(m, 1)
    g = lambda x: (x[:, 0] + x[:, 1] - 1) ** 2  # noqa: E731
    assert np.array_equal(interpolate(V1, g), g(m.points))


def test_evaluate_outside_raises():
    V = FESpace(structured_mesh("diagonal", 1), 1)
    with pytest.raises(ValueError):
        V.evaluate(np.zeros(4), [[2.0, 2.0]])


def test_integrals_sum_to_area():
    for deg in (1, 2):
        V = FESpace(disk_mesh(1.0, 1), deg)
        assert V.integrals().sum() == pytest.approx(V.mesh.areas.sum(), rel=1e-13)


# ------------------------------------------------------------ test basis
@pytest.mark.parametrize("include_boundary", [True, False])
def test_test_basis_counts(include_boundary):
    m = structured_mesh("crisscross", 2)
    W = build_test_basis(m, include_boundary)
    nv_int = (~m.boundary_vertex_mask).sum()
    ne_int = m.n_edges - len(m.boundary_edge_ids)
    if include_boundary:
        assert W.n_tests == m.n_vertices + m.n_edges == 41
    else:
        assert W.n_tests == nv_int + ne_int
    assert TestBasis(m, include_boundary, degree=1).n_tests == (m.n_vertices if include_boundary else nv_int)


def test_test_functions_nonnegative():
    m = uniform_refine(structured_mesh("union_jack", 2), 1)
    W = TestBasis(m)
    assert W.values(lattice(8)).min() >= -1e-14


def test_bubble_and_hat_values():
    m = structured_mesh("diagonal", 2)
    W = TestBasis(m)
    funcs = W.functions
    bubble = next(f for f in funcs if f.kind == "edge_bubble")
    a, b = m.edges[bubble.node]
    mid = 0.5 * (m.points[a] + m.points[b])
    assert W.evaluate(bubble.index, mid[None])[0] == pytest.approx(0.25)
    hat = next(f for f in funcs if f.kind == "vertex_hat" and not m.boundary_vertex_mask[f.node])
    V = FESpace(m, 2)
    vals = W.evaluate(hat.index, V.dof_points)
    expected = np.zeros(V.n_dofs)
    expected[hat.node] = 1.0
    # a hat is 1/2 at midpoints of edges touching its vertex, 0 at other nodes
    touching = np.flatnonzero((m.edges == hat.node).any(axis=1))
    expected[m.n_vertices + touching] = 0.5
    assert np.allclose(vals, expected)


def test_support_is_star():
    m = structured_mesh("crisscross", 2)
    W = TestBasis(m)
    for f in W.functions:
        if f.kind == "vertex_hat":
            star = set(np.flatnonzero((m.cells == f.node).any(axis=1)).tolist())
        else:
            star = {int(t) for t in m.edge_cells[f.node] if t >= 0}
        assert f.support == star == W.support(f.index)
