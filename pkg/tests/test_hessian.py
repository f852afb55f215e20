import numpy as np
import pytest

from feconvex.femspace import FESpace, TestBasis, interpolate
from feconvex.hessian import (assemble, check_fe_convexity, stencil_diagonal, stencil_union_jack,
                              sym2_min_eig)
from feconvex.mesh import disk_mesh, structured_mesh


def nodal(u, mesh):
    """Callable returning the nodal values of ``u`` at mesh vertices."""
    def f(x):
        idx = [int(np.argmin(np.linalg.norm(mesh.points - q, axis=1))) for q in x]
        return u[idx]
    return f


def interior_hats(mesh, test):
    return [s for s in range(test.n_tests)
            if test.kind[s] == 0 and not mesh.boundary_vertex_mask[test.node[s]]]


def test_sym2_min_eig_matches_numpy():
    rng = np.random.default_rng(0)
    a, b, c = rng.normal(size=(3, 200))
    ref = [np.linalg.eigvalsh([[x, y], [y, z]])[0] for x, y, z in zip(a, b, c)]
    assert np.allclose(sym2_min_eig(a, b, c), ref, atol=1e-12)


@pytest.mark.parametrize("with_boundary", [True, False])
def test_constant_gives_zero(with_boundary):
    m = structured_mesh("crisscross", 2)
    V = FESpace(m, 2)
    F = assemble(V, TestBasis(m), with_boundary)
    assert np.abs(F.apply(np.full(V.n_dofs, 3.7))).max() < 1e-13


@pytest.mark.parametrize("mesh", [structured_mesh("crisscross", 3), disk_mesh(1.0, 1)])
def test_linear_gives_zero_with_boundary_term(mesh):
    V = FESpace(mesh, 2)
    u = interpolate(V, lambda x: 2 * x[:, 0] - 5 * x[:, 1] + 1)
    assert np.abs(assemble(V, TestBasis(mesh), True).apply(u)).max() <= 1e-12


def test_boundary_term_matters_for_boundary_tests():
    m = structured_mesh("diagonal", 2)
    V = FESpace(m, 2)
    u = interpolate(V, lambda x: x[:, 0])
    assert np.abs(assemble(V, TestBasis(m), False).apply(u)).max() > 1e-3


def test_mesh_mismatch():
    V = FESpace(structured_mesh("diagonal", 2), 1)
    with pytest.raises(ValueError):
        assemble(V, TestBasis(structured_mesh("diagonal", 2)))


def test_apply_shape_check():
    m = structured_mesh("diagonal", 1)
    F = assemble(FESpace(m, 1), TestBasis(m, degree=1))
    with pytest.raises(ValueError):
        F.apply(np.zeros(3))


def test_forms_agree_with_matrices():
    m = structured_mesh("chevron", 2)
    V = FESpace(m, 2)
    F = assemble(V, TestBasis(m))
    u = np.random.default_rng(1).normal(size=V.n_dofs)
    H = F.apply(u)
    for form in F.forms()[::7]:
        assert np.allclose(form.apply(u), H[form.test_index], atol=1e-13)
        for mat in form.entries.values():
            assert np.array_equal(mat, mat.T)
    ev = F.evaluate(3, u)
    assert ev.min_eigenvalue == pytest.approx(np.linalg.eigvalsh(ev.matrix)[0], abs=1e-12)


def test_entries_only_on_overlapping_supports():
    m = structured_mesh("crisscross", 2)
    V = FESpace(m, 2)
    W = TestBasis(m)
    F = assemble(V, W)
    for form in F.forms():
        cells = W.support(form.test_index)
        allowed = set(V.element_dofs[list(cells)].ravel().tolist())
        assert set(form.entries) <= allowed


# ------------------------------------------------------------ stencils
def test_stencil_diagonal_examples():
    h = 0.1
    S = stencil_diagonal(lambda x: (x[:, 0] + x[:, 1] - 1) ** 2, h, (0.4, 0.3))
    assert sym2_min_eig(S[0, 0], S[0, 1], S[1, 1]) >= -1e-15
    assert np.abs(stencil_diagonal(lambda x: 2 * x[:, 0] - x[:, 1] + 3, h, (0.5, 0.5))).max() < 1e-14
    # u = x1^2: alpha = 2h^2 by direct substitution, beta = (2 a^2 + (a-h)^2 + (a+h)^2 - 2a^2 - (a-h)^2 - (a+h)^2)/2 = 0
    S = stencil_diagonal(lambda x: x[:, 0] ** 2, h, (0.5, 0.5))
    assert np.allclose(S, [[2 * h * h, 0], [0, 0]], atol=1e-15)


def test_stencil_union_jack_examples():
    h = 0.25
    want = h * h * np.array([[2.0, 4.0], [4.0, 2.0]])
    S = stencil_union_jack(lambda x: (x[:, 0] + x[:, 1]) ** 2, h, (0.5, 0.5))
    assert np.allclose(S, want, atol=1e-14)
    assert sym2_min_eig(S[0, 0], S[0, 1], S[1, 1]) == pytest.approx(-2 * h * h)
    S = stencil_union_jack(lambda x: (x[:, 0] + x[:, 1] - 1) ** 2, h, (0.25, 0.75))
    assert np.allclose(S, want, atol=1e-14)
    assert np.abs(stencil_union_jack(lambda x: x[:, 0] - x[:, 1], h, (0.5, 0.5))).max() < 1e-14


def test_stencil_input_checks():
    with pytest.raises(ValueError):
        stencil_diagonal(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        stencil_diagonal(lambda x: x[:, 0])


@pytest.mark.parametrize("pattern,stencil", [("diagonal", stencil_diagonal),
                                             ("union_jack", stencil_union_jack)])
def test_assembly_proportional_to_stencil(pattern, stencil):
    n = 6
    m = structured_mesh(pattern, n)
    V = FESpace(m, 1)
    W = TestBasis(m, degree=1)
    u = np.random.default_rng(3).normal(size=V.n_dofs)
    H = assemble(V, W).apply(u)
    degree = np.bincount(m.edges.ravel(), minlength=m.n_vertices)
    scales = []
    for s in interior_hats(m, W):
        v = W.node[s]
        if pattern == "union_jack" and degree[v] != 8:
            continue
        S = stencil(nodal(u, m), 1.0 / n, m.points[v])
        nz = np.abs(S) > 1e-8
        scales.extend((H[s][nz] / S[nz]).tolist())
    scales = np.array(scales)
    assert scales.size > 20
    assert scales[0] > 0
    assert np.abs(scales - scales[0]).max() <= 1e-12 * abs(scales[0]) + 1e-12


# ------------------------------------------------------------ FE-convexity
def test_fe_convex_witness_on_diagonal_mesh():
    m = structured_mesh("diagonal", 4)
    V = FESpace(m, 1)
    W = TestBasis(m, include_boundary=False, degree=1)
    u = interpolate(V, lambda x: (x[:, 0] + x[:, 1] - 1) ** 2)
    assert check_fe_convexity(assemble(V, W), u, tol=1e-10).is_fe_convex


def test_not_fe_convex_on_union_jack():
    m = structured_mesh("union_jack", 4)
    V = FESpace(m, 1)
    W = TestBasis(m, include_boundary=False, degree=1)
    rep = check_fe_convexity(assemble(V, W), interpolate(V, lambda x: (x[:, 0] + x[:, 1]) ** 2))
    assert not rep.is_fe_convex
    assert rep.worst_eigenvalue == pytest.approx(-2 / 16, rel=1e-12)


def test_zero_is_fe_convex():
    m = structured_mesh("crisscross", 2)
    V = FESpace(m, 2)
    rep = check_fe_convexity(assemble(V, TestBasis(m)), np.zeros(V.n_dofs))
    assert rep.is_fe_convex and rep.worst_eigenvalue == 0.0


def test_negative_tol_rejected():
    m = structured_mesh("diagonal", 1)
    V = FESpace(m, 1)
    with pytest.raises(ValueError):
        check_fe_convexity(assemble(V, TestBasis(m, degree=1)), np.zeros(4), tol=-1.0)
