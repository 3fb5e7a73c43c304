import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defmesh.lsfem import ConstraintSet, FoldedMeshError, apply_constraints, assemble, solve_velocity
from defmesh.mesh import Mesh, box_grid, rect_grid
from defmesh.monitor import RhsField


def _skewed(dim):
    m = rect_grid(3, 3) if dim == 2 else box_grid(2, 2, 2)
    X = m.node_coords.copy()
    X[:, 0] += 0.2 * X[:, 1] ** 2
    return m.with_coords(X)


def _energy(A, b, u, g2):
    # u'Au - 2 b'u + integral(g^2)
    return u @ (A.to_dense() @ u) - 2 * b @ u + g2


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_energy_of_linear_field_2d(a, g):
    m = _skewed(2)
    A = np.array(a).reshape(2, 2)
    u = (m.node_coords @ A.T).ravel()
    K, b = assemble(m, RhsField.from_function(m, lambda x: np.full(x.shape[:-1], g)))
    area = 1.0
    expect = area * ((np.trace(A) - g) ** 2 + (A[1, 0] - A[0, 1]) ** 2)
    assert _energy(K, b, u, g * g * area) == pytest.approx(expect, abs=1e-9)


def test_energy_of_linear_field_3d():
    m = _skewed(3)
    A = np.random.default_rng(1).standard_normal((3, 3))
    u = (m.node_coords @ A.T).ravel()
    K, b = assemble(m, RhsField.from_function(m, lambda x: np.zeros(x.shape[:-1])))
    curl = np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])
    assert _energy(K, b, u, 0.0) == pytest.approx(np.trace(A) ** 2 + curl @ curl)


@pytest.mark.parametrize("dim", [2, 3])
def test_matrix_symmetric_psd_with_constant_kernel(dim):
    m = _skewed(dim)
    K, _ = assemble(m, RhsField.from_function(m, lambda x: np.zeros(x.shape[:-1])))
    D = K.to_dense()
    assert np.allclose(D, D.T)
    assert np.linalg.eigvalsh(D).min() >= -1e-10
    for k in range(dim):
        c = np.zeros((m.n_nodes, dim))
        c[:, k] = 1.0
        assert np.allclose(D @ c.ravel(), 0.0)


def test_elimination_matches_dense_oracle():
    m = _skewed(2)
    rng = np.random.default_rng(3)
    g = RhsField.from_nodal(m, rng.standard_normal(m.n_nodes))
    bnd = np.array([bool(s) for s in m.node_markers])
    vals = rng.standard_normal((m.n_nodes, 2))
    c = ConstraintSet.from_arrays(vals, np.repeat(bnd[:, None], 2, axis=1))
    K, b = assemble(m, g)
    Kc, bc = apply_constraints(K, b, c, 2)
    assert np.allclose(Kc.to_dense(), Kc.to_dense().T)
    D = K.to_dense()
    known, kv = c.dofs(2)
    free = np.setdiff1d(np.arange(D.shape[0]), known)
    uf = np.linalg.solve(D[np.ix_(free, free)], b[free] - D[np.ix_(free, known)] @ kv)
    u = solve_velocity(m, g, c).values.ravel()
    assert np.allclose(u[known], kv)
    assert np.allclose(u[free], uf, atol=1e-8)


def test_linear_field_reproduced_on_distorted_mesh():
    m = _skewed(3)
    A = np.array([[1.0, 2.0, 0.0], [2.0, -0.5, 1.0], [0.0, 1.0, 0.3]])  # symmetric, curl-free
    bnd = np.array([bool(s) for s in m.node_markers])
    c = ConstraintSet.from_arrays(m.node_coords @ A.T, np.repeat(bnd[:, None], 3, axis=1))
    g = RhsField.from_function(m, lambda x: np.full(x.shape[:-1], np.trace(A)))
    u = solve_velocity(m, g, c)
    assert np.abs(u.values - m.node_coords @ A.T).max() <= 1e-8
    assert u.report.converged


def test_conflicting_constraints_rejected():
    with pytest.raises(ValueError, match="conflicting"):
        ConstraintSet([(0, 1, 0.5)], [(0, 1)])
    with pytest.raises(ValueError, match="conflicting"):
        ConstraintSet([(2, 0, 0.5), (2, 0, 0.25)], [])
    with pytest.raises(ValueError, match="non-finite"):
        ConstraintSet([(2, 0, np.nan)], [])


def test_slip_components_become_zero():
    vals = np.array([[1.0, 2.0], [3.0, 4.0]])
    c = ConstraintSet.from_arrays(vals, np.ones((2, 2), dtype=bool), slip=[(1, 1)])
    dofs, v = c.dofs(2)
    assert dofs.tolist() == [0, 1, 2, 3] and v.tolist() == [1.0, 2.0, 3.0, 0.0]
    assert c.n_free(6, 2) == 2


def test_folded_mesh_rejected():
    m = Mesh(2, [[0, 0], [1, 0], [0, 1], [1, 1]], [[0, 1, 2, 3]])
    with pytest.raises(FoldedMeshError) as exc:
        assemble(m, RhsField(np.zeros((1, 4)), np.zeros(4)))
    assert exc.value.elements == [0]
