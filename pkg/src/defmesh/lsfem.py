"""
Least-squares finite elements for the div-curl system

    div u = g,  curl u = 0  in the domain,   u = prescribed on the boundary.

The discrete problem minimizes ``integral((div u - g)^2 + |curl u|^2)`` over
continuous multilinear vector fields. Unknowns are node-major,
component-minor: dof ``node * dim + component``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import CgReport, SparseMatrix, cg_solve, spmv
from .mesh import Mesh, gauss_points, shape_gradients


class FoldedMeshError(ValueError):
    def __init__(self, message, elements=()):
        super().__init__(message)
        self.elements = list(elements)


class SolverError(RuntimeError):
    def __init__(self, message, report: CgReport):
        super().__init__(message)
        self.report = report


@dataclass(eq=False)
class NodalField:
    values: np.ndarray  # (n_nodes, dim)
    report: CgReport | None = None


@dataclass(eq=False)
class ConstraintSet:
    """Prescribed velocity components.

    ``dirichlet`` holds ``(node, component, value)``; ``normal_zero`` holds
    ``(node, axis)`` for slippery walls and is enforced as a zero value.
    """

    dirichlet: list
    normal_zero: list

    def __post_init__(self):
        seen: dict = {}
        for node, comp, value in self.dirichlet:
            key = (int(node), int(comp))
            if key in seen:
                raise ValueError(f"node {key[0]} component {key[1]}: conflicting constraints "
                                 f"{seen[key]} and dirichlet={value}")
            if not np.isfinite(value):
                raise ValueError(f"node {key[0]} component {key[1]}: non-finite value {value}")
            seen[key] = f"dirichlet={value}"
        for node, axis in self.normal_zero:
            key = (int(node), int(axis))
            if key in seen:
                raise ValueError(f"node {key[0]} component {key[1]}: conflicting constraints "
                                 f"{seen[key]} and normal_zero")
            seen[key] = "normal_zero"

    @classmethod
    def from_arrays(cls, values, prescribed, slip=()) -> "ConstraintSet":
        """Build from per-node arrays; components listed in ``slip`` become normal-zero."""
        slip = {(int(n), int(a)) for n, a in slip}
        nodes, comps = np.nonzero(prescribed)
        dirichlet = [(int(n), int(c), float(values[n, c])) for n, c in zip(nodes, comps) if (n, c) not in slip]
        return cls(dirichlet, sorted(slip))

    def dofs(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Constrained dof indices and their values, sorted by dof."""
        entries = [(n * dim + c, v) for n, c, v in self.dirichlet] + [(n * dim + a, 0.0) for n, a in self.normal_zero]
        entries.sort()
        if not entries:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        d, v = zip(*entries)
        return np.array(d, dtype=np.int64), np.array(v, dtype=float)

    def n_free(self, n_dofs: int, dim: int) -> int:
        return n_dofs - self.dofs(dim)[0].size


def element_operators(m: Mesh):
    """Div and curl rows at the Gauss points.

    Returns ``(div (ne, nq, ndof_e), curl (ne, nq, ncurl, ndof_e), weights (ne, nq))``.
    Raises :class:`FoldedMeshError` if any Gauss-point Jacobian is non-positive.
    """
    dim = m.dim
    gp, gw = gauss_points(dim)
    dN = shape_gradients(dim, gp)
    X = m.node_coords[m.elements]
    J = np.einsum("eai,qaj->eqij", X, dN)
    det = np.linalg.det(J)
    bad = np.flatnonzero((det <= 0).any(axis=1))
    if bad.size:
        raise FoldedMeshError(f"non-positive Jacobian in element(s) {bad.tolist()[:10]}", bad)
    invJ = np.linalg.inv(J)
    # grad[e, q, a, i] = d N_a / d x_i
    grad = np.einsum("qaj,eqji->eqai", dN, invJ)
    ne, nq, nv = grad.shape[:3]
    div = grad.reshape(ne, nq, nv * dim)
    curl_rows = 1 if dim == 2 else 3
    curl = np.zeros((ne, nq, curl_rows, nv, dim))
    if dim == 2:
        curl[:, :, 0, :, 1] = grad[..., 0]
        curl[:, :, 0, :, 0] = -grad[..., 1]
    else:
        # (d u3/dy - d u2/dz, d u1/dz - d u3/dx, d u2/dx - d u1/dy)
        curl[:, :, 0, :, 2] = grad[..., 1]
        curl[:, :, 0, :, 1] = -grad[..., 2]
        curl[:, :, 1, :, 0] = grad[..., 2]
        curl[:, :, 1, :, 2] = -grad[..., 0]
        curl[:, :, 2, :, 1] = grad[..., 0]
        curl[:, :, 2, :, 0] = -grad[..., 1]
    return div, curl.reshape(ne, nq, curl_rows, nv * dim), det * gw


def assemble(m: Mesh, g) -> tuple[SparseMatrix, np.ndarray]:
    """Normal equations of the least-squares functional; ``g`` is a RhsField."""
    dim = m.dim
    div, curl, w = element_operators(m)
    K = np.einsum("eq,eqa,eqb->eab", w, div, div) + np.einsum("eq,eqca,eqcb->eab", w, curl, curl)
    F = np.einsum("eq,eqa,eq->ea", w, div, g.qp)
    dofs = (m.elements[:, :, None] * dim + np.arange(dim)).reshape(m.n_elements, -1)
    rows = np.broadcast_to(dofs[:, :, None], K.shape)
    cols = np.broadcast_to(dofs[:, None, :], K.shape)
    n = m.n_nodes * dim
    A = SparseMatrix.from_triplets(rows, cols, K, (n, n), symmetric=True)
    b = np.bincount(dofs.ravel(), weights=F.ravel(), minlength=n)
    return A, b


def apply_constraints(A: SparseMatrix, b, c: ConstraintSet, dim: int) -> tuple[SparseMatrix, np.ndarray]:
    """Symmetric elimination of prescribed dofs.

    Known values move to the right-hand side, their rows and columns are
    cleared, and the diagonal entry becomes 1 with the value as rhs.
    """
    dofs, vals = c.dofs(dim)
    if dofs.size and (dofs.min() < 0 or dofs.max() >= A.n_rows):
        raise ValueError(f"constraint dof outside [0, {A.n_rows})")
    known = np.zeros(A.n_rows)
    known[dofs] = vals
    mask = np.zeros(A.n_rows, dtype=bool)
    mask[dofs] = True
    rows, cols, v = A.row_indices, A.col_indices, A.values
    b = np.asarray(b, dtype=float) - spmv(A, known)
    b[dofs] = vals
    keep = ~mask[rows] & ~mask[cols]
    r = np.concatenate([rows[keep], dofs])
    cc = np.concatenate([cols[keep], dofs])
    vv = np.concatenate([v[keep], np.ones(dofs.size)])
    return SparseMatrix.from_triplets(r, cc, vv, A.shape, symmetric=A.symmetric), b


def solve_velocity(m: Mesh, g, c: ConstraintSet, tol: float = 1e-10, max_iter: int | None = None) -> NodalField:
    A, b = assemble(m, g)
    Ac, bc = apply_constraints(A, b, c, m.dim)
    x, report = cg_solve(Ac, bc, tol=tol, max_iter=max_iter)
    if not report.converged:
        raise SolverError(f"CG did not converge: {report}", report)
    dofs, vals = c.dofs(m.dim)
    x[dofs] = vals
    return NodalField(x.reshape(m.n_nodes, m.dim), report)
