"""
High-order (Lagrange) elements harvested from a conforming subdivided mesh,
plus Gmsh MSH 4.1, legacy VTK and SVG output.

Element nodes are stored in lexicographic lattice order (x fastest);
:func:`gmsh_permutation` and :func:`vtk_permutation` map that order onto the
file formats' own orderings.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .mesh import FACETS, REF_VERTICES, Marker, Mesh, SubdivisionMap, lattice_index, lattice_points

EXPORT_ORDERS = (1, 3)

GMSH_TYPES = {(2, 1): 3, (3, 1): 5, (2, 3): 36, (3, 3): 92}
VTK_TYPES = {(2, 1): 9, (3, 1): 12, (2, 3): 70, (3, 3): 72}

# gmsh reference hexahedron edges and faces (vertex ids)
_GMSH_HEX_EDGES = ((0, 1), (0, 3), (0, 4), (1, 2), (1, 5), (2, 3), (2, 6), (3, 7), (4, 5), (4, 7), (5, 6), (6, 7))
_GMSH_HEX_FACES = ((0, 3, 2, 1), (0, 1, 5, 4), (0, 4, 7, 3), (1, 2, 6, 5), (2, 3, 7, 6), (4, 5, 6, 7))


@dataclass(eq=False)
class HighOrderMesh:
    dim: int
    p: int
    nodes: np.ndarray
    elements: np.ndarray  # (n_elements, (p+1)^dim) lexicographic
    boundary_facets: np.ndarray  # (element, local facet, marker index)
    markers: tuple[Marker, ...]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @classmethod
    def from_linear(cls, m: Mesh) -> "HighOrderMesh":
        """View a multilinear mesh as order-1 Lagrange cells."""
        # vertex whose reference coordinates match each lattice point
        ref = REF_VERTICES[m.dim].astype(int)
        order = [int(np.flatnonzero((ref == v).all(axis=1))[0]) for v in lattice_points(m.dim, 1)]
        return cls(m.dim, 1, m.node_coords.copy(), m.elements[:, order], m.boundary_facets.copy(), m.markers)

    def marker_index(self, name: str) -> int:
        for i, mk in enumerate(self.markers):
            if mk.name == name:
                return i
        raise KeyError(name)


def build_hoe(coarse: Mesh, conformed: Mesh, sub: SubdivisionMap) -> HighOrderMesh:
    """One order-p cell per coarse element, nodes taken from the conformed fine mesh."""
    if conformed.n_nodes != sub.fine_mesh.n_nodes:
        raise ValueError(f"conformed mesh has {conformed.n_nodes} nodes, subdivision has {sub.fine_mesh.n_nodes}")
    if sub.lattice.shape != (coarse.n_elements, (sub.p + 1) ** coarse.dim):
        raise ValueError(f"subdivision lattice has shape {sub.lattice.shape}, expected "
                         f"({coarse.n_elements}, {(sub.p + 1) ** coarse.dim})")
    if sub.lattice.min() < 0 or sub.lattice.max() >= conformed.n_nodes:
        raise ValueError("subdivision lattice references a missing node")
    return HighOrderMesh(coarse.dim, sub.p, conformed.node_coords.copy(), sub.lattice.copy(),
                         coarse.boundary_facets.copy(), coarse.markers)


def lagrange_1d(p: int, s) -> tuple[np.ndarray, np.ndarray]:
    """Equispaced Lagrange basis on [0,1]: values and derivatives, (npts, p+1)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    nodes = np.linspace(0.0, 1.0, p + 1)
    val = np.ones((s.size, p + 1))
    der = np.zeros((s.size, p + 1))
    for j in range(p + 1):
        others = [m for m in range(p + 1) if m != j]
        denom = np.prod([nodes[j] - nodes[m] for m in others])
        val[:, j] = np.prod([s - nodes[m] for m in others], axis=0) / denom
        for skip in others:
            der[:, j] += np.prod([s - nodes[m] for m in others if m != skip], axis=0) / denom
    return val, der


def lagrange_tensor(dim: int, p: int, ref) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Lagrange values (npts, nbasis) and gradients (npts, nbasis, dim)."""
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    lat = lattice_points(dim, p)
    v1 = [lagrange_1d(p, ref[:, k]) for k in range(dim)]
    val = np.ones((ref.shape[0], lat.shape[0]))
    grad = np.ones((ref.shape[0], lat.shape[0], dim))
    for k in range(dim):
        vk, dk = v1[k][0][:, lat[:, k]], v1[k][1][:, lat[:, k]]
        val *= vk
        for j in range(dim):
            grad[:, :, j] *= dk if j == k else vk
    return val, grad


def sampling_lattice(dim: int, n: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n)
    return s[lattice_points(dim, n - 1)]


def hoe_jacobians(h: HighOrderMesh, n_samples: int | None = None) -> np.ndarray:
    """Jacobian determinants of every cell's order-p map on an ``n^dim`` lattice."""
    n = n_samples or h.p + 2
    _, grad = lagrange_tensor(h.dim, h.p, sampling_lattice(h.dim, n))
    X = h.nodes[h.elements]
    return np.linalg.det(np.einsum("eai,qaj->eqij", X, grad))


def _facet_lattice(dim: int, p: int, local_facet: int) -> np.ndarray:
    """Lattice indices on a local facet, as a (p+1)^(dim-1) grid in facet parameters."""
    axis, side, _ = FACETS[dim][local_facet]
    free = [k for k in range(dim) if k != axis]
    idx = []
    for t in itertools.product(range(p + 1), repeat=dim - 1):
        ijk = [0] * dim
        ijk[axis] = p if side else 0
        for k, c in zip(free, reversed(t)):
            ijk[k] = c
        idx.append(lattice_index(ijk, p))
    return np.array(idx)


def facet_points(h: HighOrderMesh, facet: int, samples: int) -> np.ndarray:
    """Points of the order-p facet map on a ``samples^(dim-1)`` parameter grid."""
    e, lf, _ = h.boundary_facets[facet]
    ids = h.elements[e, _facet_lattice(h.dim, h.p, lf)]
    s = np.linspace(0.0, 1.0, samples)
    if h.dim == 2:
        N, _ = lagrange_1d(h.p, s)
        return N @ h.nodes[ids]
    N, _ = lagrange_tensor(2, h.p, s[lattice_points(2, samples - 1)])
    return N @ h.nodes[ids]


def edge_deviation(h, marker: str, shape, samples: int = 33) -> float:
    """Largest distance from the marked boundary's order-p map to ``shape``."""
    if isinstance(h, Mesh):
        h = HighOrderMesh.from_linear(h)
    mi = h.marker_index(marker)
    worst = 0.0
    for f in np.flatnonzero(h.boundary_facets[:, 2] == mi):
        pts = facet_points(h, int(f), samples)
        worst = max(worst, float(np.max(shape.distance(pts))))
    return worst


@lru_cache(maxsize=None)
def _gmsh_quad_order(p: int) -> tuple:
    """Gmsh quadrilateral order on a ``(p+1)^2`` lattice: corners, edges, then the interior recursively."""
    if p == 0:
        return ((0, 0),)
    pts = [(0, 0), (p, 0), (p, p), (0, p)]
    pts += [(i, 0) for i in range(1, p)]
    pts += [(p, j) for j in range(1, p)]
    pts += [(p - i, p) for i in range(1, p)]
    pts += [(0, p - j) for j in range(1, p)]
    if p >= 2:
        pts += [(i + 1, j + 1) for i, j in _gmsh_quad_order(p - 2)]
    return tuple(pts)


@lru_cache(maxsize=None)
def _gmsh_hex_order(p: int) -> tuple:
    if p == 0:
        return ((0, 0, 0),)
    corner = [tuple(p * c for c in v) for v in
              ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))]
    pts = list(corner)
    for a, b in _GMSH_HEX_EDGES:
        A, B = np.array(corner[a]), np.array(corner[b])
        pts += [tuple(int(c) for c in A + (B - A) * s // p) for s in range(1, p)]
    for a, b, _, d in _GMSH_HEX_FACES:
        A, B, D = np.array(corner[a]), np.array(corner[b]), np.array(corner[d])
        if p >= 2:
            for u, v in _gmsh_quad_order(p - 2):
                P = A + (B - A) * (u + 1) // p + (D - A) * (v + 1) // p
                pts.append(tuple(int(c) for c in P))
    if p >= 2:
        pts += [(i + 1, j + 1, k + 1) for i, j, k in _gmsh_hex_order(p - 2)]
    return tuple(pts)


def gmsh_permutation(dim: int, p: int) -> np.ndarray:
    """``perm`` with ``gmsh_nodes = lattice_nodes[perm]``."""
    order = _gmsh_quad_order(p) if dim == 2 else _gmsh_hex_order(p)
    return np.array([lattice_index(ijk, p) for ijk in order], dtype=np.int64)


def _vtk_quad_index(i: int, j: int, p: int) -> int:
    ibdy, jbdy = i in (0, p), j in (0, p)
    if ibdy and jbdy:
        return (2 if j else 1) if i else (3 if j else 0)
    offset = 4
    if jbdy:
        return (i - 1) + (2 * (p - 1) if j else 0) + offset
    if ibdy:
        return (j - 1) + ((p - 1) if i else 3 * (p - 1)) + offset
    offset += 4 * (p - 1)
    return offset + (i - 1) + (p - 1) * (j - 1)


def _vtk_hex_index(i: int, j: int, k: int, p: int) -> int:
    ibdy, jbdy, kbdy = i in (0, p), j in (0, p), k in (0, p)
    nbdy = ibdy + jbdy + kbdy
    if nbdy == 3:
        return ((2 if j else 1) if i else (3 if j else 0)) + (4 if k else 0)
    offset = 8
    q = p - 1
    if nbdy == 2:
        if not ibdy:
            return (i - 1) + (2 * q if j else 0) + (4 * q if k else 0) + offset
        if not jbdy:
            return (j - 1) + (q if i else 3 * q) + (4 * q if k else 0) + offset
        offset += 8 * q
        # edges along k in the pre-9.1 VTK order that legacy (< 5.1) files use: (0,4), (1,5), (3,7), (2,6)
        return (k - 1) + q * ((3 if j else 1) if i else (2 if j else 0)) + offset
    offset += 12 * q
    if nbdy == 1:
        if ibdy:
            return (j - 1) + q * (k - 1) + (q * q if i else 0) + offset
        offset += 2 * q * q
        if jbdy:
            return (i - 1) + q * (k - 1) + (q * q if j else 0) + offset
        offset += 2 * q * q
        return (i - 1) + q * (j - 1) + (q * q if k else 0) + offset
    offset += 6 * q * q
    return offset + (i - 1) + q * ((j - 1) + q * (k - 1))


def vtk_permutation(dim: int, p: int) -> np.ndarray:
    """``perm`` with ``vtk_nodes = lattice_nodes[perm]`` (Lagrange cells; linear cells for p=1).

    This is the point order of legacy 4.2 files. VTK 9.1 swapped two of the
    k-direction hexahedron edges in memory; its reader converts files older
    than 5.1, so 4.2 files keep the earlier order.
    """
    lat = lattice_points(dim, p)
    perm = np.empty(lat.shape[0], dtype=np.int64)
    for li, ijk in enumerate(lat):
        vi = _vtk_quad_index(*ijk, p) if dim == 2 else _vtk_hex_index(*ijk, p)
        perm[vi] = li
    return perm


def _as_hoe(h) -> HighOrderMesh:
    h = HighOrderMesh.from_linear(h) if isinstance(h, Mesh) else h
    if h.p not in EXPORT_ORDERS:
        raise ValueError(f"export supports orders {EXPORT_ORDERS}, got p={h.p}")
    return h


def _fmt(x: float) -> str:
    return repr(float(x))


def _xyz(h: HighOrderMesh) -> np.ndarray:
    return np.hstack([h.nodes, np.zeros((h.n_nodes, 3 - h.dim))])


def export_msh(h, path) -> None:
    """Gmsh MSH 4.1 ASCII with a single entity holding all cells."""
    h = _as_hoe(h)
    xyz = _xyz(h)
    perm = gmsh_permutation(h.dim, h.p)
    etype = GMSH_TYPES[(h.dim, h.p)]
    n, ne = h.n_nodes, h.n_elements
    lo, hi = xyz.min(axis=0), xyz.max(axis=0)
    out = ["$MeshFormat", "4.1 0 8", "$EndMeshFormat", "$Entities"]
    counts = [0, 0, 0, 0]
    counts[h.dim] = 1
    out.append(" ".join(map(str, counts)))
    out.append(" ".join(["1"] + [_fmt(c) for c in lo] + [_fmt(c) for c in hi] + ["0", "0"]))
    out += ["$EndEntities", "$Nodes", f"1 {n} 1 {n}", f"{h.dim} 1 0 {n}"]
    out += [str(i + 1) for i in range(n)]
    out += [" ".join(_fmt(c) for c in x) for x in xyz]
    out += ["$EndNodes", "$Elements", f"1 {ne} 1 {ne}", f"{h.dim} 1 {etype} {ne}"]
    for e, conn in enumerate(h.elements):
        out.append(" ".join([str(e + 1)] + [str(int(c) + 1) for c in conn[perm]]))
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


def export_vtk(h, path) -> None:
    """Legacy ASCII unstructured grid; order-3 cells use the Lagrange types."""
    h = _as_hoe(h)
    xyz = _xyz(h)
    perm = vtk_permutation(h.dim, h.p)
    ctype = VTK_TYPES[(h.dim, h.p)]
    nper = perm.size
    out = ["# vtk DataFile Version 4.2", f"defmesh order-{h.p} mesh", "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {h.n_nodes} double"]
    out += [" ".join(_fmt(c) for c in x) for x in xyz]
    out.append(f"CELLS {h.n_elements} {h.n_elements * (nper + 1)}")
    out += [" ".join([str(nper)] + [str(int(c)) for c in conn[perm]]) for conn in h.elements]
    out.append(f"CELL_TYPES {h.n_elements}")
    out += [str(ctype)] * h.n_elements
    Path(path).write_text("\n".join(out) + "\n")


def _element_edges(p: int) -> list[np.ndarray]:
    """Lattice indices along the four edges of a quad, each from one corner to the next."""
    return [np.array([lattice_index((i, 0), p) for i in range(p + 1)]),
            np.array([lattice_index((p, j), p) for j in range(p + 1)]),
            np.array([lattice_index((p - i, p), p) for i in range(p + 1)]),
            np.array([lattice_index((0, p - j), p) for j in range(p + 1)])]


def edge_curves(h, points_per_edge: int = 16) -> list[np.ndarray]:
    """Sampled polylines of all distinct element edges (2D)."""
    h = HighOrderMesh.from_linear(h) if isinstance(h, Mesh) else h
    N, _ = lagrange_1d(h.p, np.linspace(0.0, 1.0, points_per_edge))
    seen = set()
    curves = []
    for conn in h.elements:
        for idx in _element_edges(h.p):
            ids = conn[idx]
            key = tuple(sorted((int(ids[0]), int(ids[-1])))) + tuple(sorted(int(i) for i in ids[1:-1]))
            if key in seen:
                continue
            seen.add(key)
            curves.append(h.nodes[ids] if h.p == 1 else N @ h.nodes[ids])
    return curves


def _color(v: float, lo: float, hi: float) -> str:
    s = 0.5 if hi <= lo else min(max((v - lo) / (hi - lo), 0.0), 1.0)
    # blue -> white -> red
    if s < 0.5:
        r = g = int(round(255 * 2 * s))
        b = 255
    else:
        r = 255
        g = b = int(round(255 * 2 * (1 - s)))
    return f"#{r:02x}{g:02x}{b:02x}"


def plot_svg(h, path, fill_values=None, size: int = 600, points_per_edge: int = 16) -> None:
    """SVG of a 2D mesh. Order-3 edges are drawn as sampled cubics, linear edges as segments.

    ``fill_values`` (one per element, e.g. the Jacobian ratio ``J/f``)
    colors the cells.
    """
    dim = h.dim
    if dim != 2:
        raise ValueError("plot_svg draws 2D meshes only; use export_vtk for 3D")
    hh = HighOrderMesh.from_linear(h) if isinstance(h, Mesh) else h
    lo, hi = hh.nodes.min(axis=0), hh.nodes.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    pad = 10.0
    scale = (size - 2 * pad) / span

    def tr(P):
        return [(pad + (x - lo[0]) * scale, pad + (hi[1] - y) * scale) for x, y in P]

    width = pad * 2 + (hi[0] - lo[0]) * scale
    height = pad * 2 + (hi[1] - lo[1]) * scale
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.2f}" height="{height:.2f}" '
           f'viewBox="0 0 {width:.2f} {height:.2f}">']
    if fill_values is not None:
        fill_values = np.asarray(fill_values, dtype=float)
        if fill_values.shape != (hh.n_elements,):
            raise ValueError(f"fill_values must have one value per element ({hh.n_elements})")
        vlo, vhi = float(fill_values.min()), float(fill_values.max())
        N, _ = lagrange_1d(hh.p, np.linspace(0.0, 1.0, points_per_edge if hh.p > 1 else 2))
        for conn, val in zip(hh.elements, fill_values):
            ring = np.vstack([(N @ hh.nodes[conn[idx]])[:-1] for idx in _element_edges(hh.p)])
            pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in tr(ring))
            out.append(f'<polygon points="{pts}" fill="{_color(val, vlo, vhi)}" stroke="none"/>')
    for curve in edge_curves(hh, points_per_edge):
        P = tr(curve)
        if hh.p == 1:
            (x0, y0), (x1, y1) = P
            out.append(f'<line x1="{x0:.3f}" y1="{y0:.3f}" x2="{x1:.3f}" y2="{y1:.3f}" stroke="black" stroke-width="1"/>')
        else:
            pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in P)
            out.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
