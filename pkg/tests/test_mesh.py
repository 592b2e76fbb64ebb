import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from neural_levelset.mesh import (CartesianGrid, FeSpaceQ1, SparseSystem, build_grid, eliminate, interpolate_at,
                                  q1_shape, q1_shape_grad, reference_laplace, solve_sparse)
from neural_levelset.physics.heat import dirichlet_space, laplace_kernel
from neural_levelset.physics.fcm import reference_integral
from neural_levelset.mesh import Assembler


def test_smallest_grid():
    g = build_grid(1, 1, 1, 1)
    assert g.n_nodes == 4 and g.n_cells == 1 and g.h == 1


def test_benchmark_node_counts():
    assert build_grid(95, 95, 1, 1).n_nodes == 9216
    assert build_grid(287, 95, 3, 1).n_nodes == 27648


def test_invalid_grid():
    with pytest.raises(ValueError):
        build_grid(0, 3)
    with pytest.raises(ValueError):
        CartesianGrid(2, 2, -1.0, 1.0)


def test_node_numbering_and_cells():
    g = build_grid(3, 2, 3.0, 2.0)
    X = g.node_coords
    assert np.allclose(X[g.node_index(2, 1)], (2.0, 1.0))
    # counter-clockwise from the lower-left corner
    assert list(g.cell_nodes[g.nx + 1]) == [5, 6, 10, 9]


def test_interpolate_constant_and_linear():
    g = build_grid(4, 4)
    assert interpolate_at(g, np.full(g.n_nodes, 2.5), (0.31, 0.77)) == pytest.approx(2.5, abs=1e-14)
    assert interpolate_at(g, g.node_coords[:, 0], (0.25, 0.7)) == pytest.approx(0.25, abs=1e-14)


def test_interpolate_matches_bilinear_formula():
    rng = np.random.default_rng(0)
    g = build_grid(5, 3, 2.0, 1.0)
    c = rng.standard_normal(g.n_nodes)
    for _ in range(20):
        x, y = rng.uniform(0, 2), rng.uniform(0, 1)
        i, j = min(int(x / g.hx), g.nx - 1), min(int(y / g.hy), g.ny - 1)
        s, t = x / g.hx - i, y / g.hy - j
        k = lambda a, b: c[(j + b) * (g.nx + 1) + i + a]
        ref = k(0, 0) * (1 - s) * (1 - t) + k(1, 0) * s * (1 - t) + k(1, 1) * s * t + k(0, 1) * (1 - s) * t
        assert interpolate_at(g, c, (x, y)) == pytest.approx(ref, abs=1e-13)


def test_identity_solve():
    s = SparseSystem(sp.identity(3), np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(solve_sparse(s), [1.0, 2.0, 3.0])


def test_poisson_1d_against_dense():
    A = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(4, 4))
    s = SparseSystem(A, np.ones(4))
    assert np.allclose(solve_sparse(s), np.linalg.solve(A.toarray(), np.ones(4)), atol=1e-14)
    assert np.allclose(solve_sparse(s), [2.0, 3.0, 3.0, 2.0])


def test_transpose_solve_nonsymmetric():
    A = np.array([[4.0, 1.0, 0.0], [2.0, 5.0, 1.0], [0.0, 3.0, 6.0]])
    b = np.array([1.0, -2.0, 0.5])
    s = SparseSystem(sp.csr_matrix(A), b)
    assert np.allclose(solve_sparse(s, transpose=True), np.linalg.solve(A.T, b), atol=1e-14)
    assert np.allclose(solve_sparse(s), np.linalg.solve(A, b), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_partition_of_unity(xi, eta):
    N = q1_shape(np.array([[xi]]), np.array([[eta]]))
    assert abs(N.sum() - 1.0) < 1e-14
    G = q1_shape_grad(np.array([[xi]]), np.array([[eta]]), 0.3, 0.7)
    assert np.allclose(G.sum(axis=-2), 0.0, atol=1e-13)


def test_laplacian_reproduces_linear_field():
    g = build_grid(6, 5, 1.0, 0.8)
    K = Assembler(g.cell_nodes, g.n_nodes).matrix(np.broadcast_to(reference_integral(g, laplace_kernel(g)),
                                                                    (g.n_cells, 4, 4)))
    X = g.node_coords
    exact = 0.3 + 2.0 * X[:, 0] - 1.5 * X[:, 1]
    bnd = np.unique(np.concatenate([g.edge_nodes(e) for e in ("left", "right", "top", "bottom")]))
    space = FeSpaceQ1(g, 1, bnd, exact[bnd])
    u = space.expand(eliminate(K, np.zeros(g.n_nodes), space).solve())
    assert np.max(np.abs(u - exact)) < 1e-12


def test_reference_laplace_matches_quadrature():
    g = build_grid(3, 3, 1.0, 2.0)
    assert np.allclose(reference_laplace(g.hx, g.hy), reference_integral(g, laplace_kernel(g)), atol=1e-14)


def test_numbering_deterministic():
    a, b = build_grid(7, 4), build_grid(7, 4)
    assert np.array_equal(a.cell_nodes, b.cell_nodes)
    assert np.array_equal(FeSpaceQ1(a, 2).cell_dofs, FeSpaceQ1(b, 2).cell_dofs)


def test_vector_dofs_interleaved():
    g = build_grid(2, 2)
    dofs = FeSpaceQ1(g, 2).cell_dofs
    n = g.cell_nodes[0]
    assert list(dofs[0]) == [2 * n[0], 2 * n[0] + 1, 2 * n[1], 2 * n[1] + 1, 2 * n[2], 2 * n[2] + 1,
                             2 * n[3], 2 * n[3] + 1]


def test_duplicate_dirichlet_rejected():
    with pytest.raises(ValueError):
        FeSpaceQ1(build_grid(2, 2), 1, np.array([0, 0]), np.zeros(2))


def test_dirichlet_space_edges():
    g = build_grid(4, 4)
    s = dirichlet_space(g, ("top", "left"))
    assert s.fixed.size == 9
