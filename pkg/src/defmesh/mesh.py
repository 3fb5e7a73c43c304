"""
Structured quad/hex meshes.

Reference element is ``[0,1]^dim``. Quad vertices run counterclockwise from
the origin; hex vertices list the bottom face (z=0) counterclockwise, then
the top face in the same order.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal, Mapping

import numpy as np

MarkerKind = Literal["moving", "slippery", "fixed"]

# reference coordinates of element vertices
REF_VERTICES = {
    2: np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float),
    3: np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                 [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float),
}

# local facets: (normal axis, side, vertex ids ordered so the right-hand rule points outward)
FACETS = {
    2: [(1, 0, (0, 1)), (0, 1, (1, 2)), (1, 1, (2, 3)), (0, 0, (3, 0))],
    3: [(2, 0, (0, 3, 2, 1)), (2, 1, (4, 5, 6, 7)), (1, 0, (0, 1, 5, 4)),
        (0, 1, (1, 2, 6, 5)), (1, 1, (2, 3, 7, 6)), (0, 0, (0, 4, 7, 3))],
}

SIDE_NAMES = {
    2: ("xmin", "xmax", "ymin", "ymax"),
    3: ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax"),
}
SIDE_ALIASES = {"left": "xmin", "right": "xmax", "bottom": "ymin", "top": "ymax"}

GAUSS_1D = (np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)]), np.array([0.5, 0.5]))


class MeshFormatError(ValueError):
    """Malformed mesh file or mesh data."""


@dataclass(frozen=True)
class Marker:
    name: str
    kind: MarkerKind
    axis: int | None = None  # outward normal axis, slippery walls only

    def __post_init__(self):
        if self.kind not in ("moving", "slippery", "fixed"):
            raise ValueError(f"unknown marker kind {self.kind!r}")


def side_key(name: str, dim: int) -> tuple[int, int]:
    """Map ``xmin``/``left``/... to ``(axis, side)``."""
    name = SIDE_ALIASES.get(name, name) if dim == 2 else name
    if name not in SIDE_NAMES[dim]:
        raise ValueError(f"unknown side {name!r}; expected one of {SIDE_NAMES[dim]}")
    axis = "xyz".index(name[0])
    return axis, int(name.endswith("max"))


def gauss_points(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor 2-point Gauss rule on [0,1]^dim, x fastest."""
    pts, wts = GAUSS_1D
    grid = np.array(list(itertools.product(range(2), repeat=dim)))[:, ::-1]
    return pts[grid], np.prod(wts[grid], axis=1)


def shape_values(dim: int, ref) -> np.ndarray:
    """Multilinear shape functions at ``ref`` (npts, dim) -> (npts, 2**dim)."""
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    v = REF_VERTICES[dim]
    out = np.ones((ref.shape[0], v.shape[0]))
    for k in range(dim):
        out *= np.where(v[:, k] == 1, ref[:, k:k + 1], 1.0 - ref[:, k:k + 1])
    return out


def shape_gradients(dim: int, ref) -> np.ndarray:
    """Gradients of the multilinear shape functions, (npts, 2**dim, dim)."""
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    v = REF_VERTICES[dim]
    npts, nv = ref.shape[0], v.shape[0]
    out = np.ones((npts, nv, dim))
    for j in range(dim):
        for k in range(dim):
            if k == j:
                fac = np.where(v[:, k] == 1, 1.0, -1.0)[None, :]
            else:
                fac = np.where(v[:, k] == 1, ref[:, k:k + 1], 1.0 - ref[:, k:k + 1])
            out[:, :, j] *= fac
    return out


@dataclass(eq=False)
class Mesh:
    """Quad (dim=2) or hex (dim=3) mesh.

    ``boundary_facets`` rows are ``(element, local facet, marker index)``
    with the marker index pointing into ``markers``.
    """

    dim: int
    node_coords: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    markers: tuple[Marker, ...] = ()

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise MeshFormatError(f"dim must be 2 or 3, got {self.dim}")
        self.node_coords = np.asarray(self.node_coords, dtype=float).reshape(-1, self.dim)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, 2 ** self.dim)
        self.boundary_facets = np.asarray(self.boundary_facets, dtype=np.int64).reshape(-1, 3)
        self.markers = tuple(self.markers)
        n = self.n_nodes
        for e, conn in enumerate(self.elements):
            bad = conn[(conn < 0) | (conn >= n)]
            if bad.size:
                raise MeshFormatError(f"element {e} references node {bad[0]} outside [0, {n})")
        for i, (e, lf, mk) in enumerate(self.boundary_facets):
            if not 0 <= e < self.n_elements:
                raise MeshFormatError(f"facet {i} references element {e} outside [0, {self.n_elements})")
            if not 0 <= lf < len(FACETS[self.dim]):
                raise MeshFormatError(f"facet {i} has local facet index {lf}")
            if not 0 <= mk < len(self.markers):
                raise MeshFormatError(f"facet {i} references marker {mk} outside [0, {len(self.markers)})")
        names = [m.name for m in self.markers]
        if len(set(names)) != len(names):
            raise MeshFormatError(f"duplicate marker names in {names}")

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def marker(self, name: str) -> Marker:
        for m in self.markers:
            if m.name == name:
                return m
        raise KeyError(name)

    def facet_nodes(self, i: int) -> np.ndarray:
        e, lf, _ = self.boundary_facets[i]
        return self.elements[e, list(FACETS[self.dim][lf][2])]

    @cached_property
    def node_markers(self) -> list[frozenset[str]]:
        """Union of incident boundary-facet marker names per node."""
        sets = [set() for _ in range(self.n_nodes)]
        for i, (_, _, mk) in enumerate(self.boundary_facets):
            for n in self.facet_nodes(i):
                sets[n].add(self.markers[mk].name)
        return [frozenset(s) for s in sets]

    def nodes_with_marker(self, name: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.node_markers) if name in s], dtype=np.int64)

    def with_coords(self, coords) -> "Mesh":
        """Same topology and markers, new node positions."""
        out = Mesh.__new__(Mesh)
        out.dim = self.dim
        out.node_coords = np.array(coords, dtype=float).reshape(self.node_coords.shape)
        out.elements = self.elements
        out.boundary_facets = self.boundary_facets
        out.markers = self.markers
        if "node_markers" in self.__dict__:
            out.__dict__["node_markers"] = self.node_markers
        return out

    def jacobian_matrices(self, ref) -> np.ndarray:
        """d x / d ref at reference points, shape (n_elements, npts, dim, dim)."""
        dN = shape_gradients(self.dim, ref)
        X = self.node_coords[self.elements]
        return np.einsum("eai,qaj->eqij", X, dN)

    def jacobians(self, ref) -> np.ndarray:
        return np.linalg.det(self.jacobian_matrices(ref))

    def map_points(self, ref) -> np.ndarray:
        """Physical images of reference points, (n_elements, npts, dim)."""
        N = shape_values(self.dim, ref)
        return np.einsum("qa,eai->eqi", N, self.node_coords[self.elements])

    def centroids(self) -> np.ndarray:
        return self.node_coords[self.elements].mean(axis=1)


def _build_grid(counts, bounds, marker_assignment: Mapping[str, Marker] | None) -> Mesh:
    dim = len(counts)
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if any(c < 1 for c in counts):
        raise ValueError(f"cell counts must be >= 1, got {tuple(counts)}")
    if lo.shape != (dim,) or hi.shape != (dim,) or np.any(hi - lo <= 0) or not np.all(np.isfinite(hi - lo)):
        raise ValueError(f"degenerate bounds {bounds!r}")
    axes = [np.linspace(lo[k], hi[k], counts[k] + 1) for k in range(dim)]
    # x fastest
    idx = np.array(list(itertools.product(*[range(c + 1) for c in reversed(counts)])))[:, ::-1]
    coords = np.column_stack([axes[k][idx[:, k]] for k in range(dim)])
    stride = np.cumprod([1] + [c + 1 for c in counts[:-1]])

    cells = np.array(list(itertools.product(*[range(c) for c in reversed(counts)])))[:, ::-1]
    verts = REF_VERTICES[dim].astype(np.int64)
    elements = ((cells[:, None, :] + verts[None, :, :]) * stride).sum(axis=2)

    assignment = {}
    for side, mk in (marker_assignment or {}).items():
        key = side_key(side, dim)
        if key in assignment:
            raise ValueError(f"side {side!r} assigned twice")
        assignment[key] = mk
    markers: list[Marker] = []
    facets = []
    for f, (axis, s, _) in enumerate(FACETS[dim]):
        mk = assignment.get((axis, s))
        if mk is None:
            mk = Marker(SIDE_NAMES[dim][2 * axis + s], "fixed")
        if mk.kind == "slippery":
            if mk.axis is None:
                mk = Marker(mk.name, mk.kind, axis)
            elif mk.axis != axis:
                raise ValueError(f"slippery marker {mk.name!r} has axis {mk.axis} but is on a side normal to axis {axis}")
        existing = [m for m in markers if m.name == mk.name]
        if existing:
            if existing[0] != mk:
                raise ValueError(f"marker {mk.name!r} used with conflicting definitions {existing[0]} and {mk}")
            mi = markers.index(existing[0])
        else:
            markers.append(mk)
            mi = len(markers) - 1
        on_side = np.flatnonzero(cells[:, axis] == (counts[axis] - 1 if s else 0))
        facets.extend((int(e), f, mi) for e in on_side)
    facets.sort()
    return Mesh(dim, coords, elements, np.array(facets, dtype=np.int64), tuple(markers))


def rect_grid(nx: int, ny: int, bounds=((0.0, 0.0), (1.0, 1.0)),
              marker_assignment: Mapping[str, Marker] | None = None) -> Mesh:
    """Uniform ``nx`` x ``ny`` quad grid.

    Sides are named ``xmin``, ``xmax``, ``ymin``, ``ymax`` (or ``left``,
    ``right``, ``bottom``, ``top``). Sides without a marker get a fixed marker
    named after the side. A slippery marker without an axis takes the side's
    normal axis.
    """
    return _build_grid((nx, ny), bounds, marker_assignment)


def box_grid(nx: int, ny: int, nz: int, bounds=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
             marker_assignment: Mapping[str, Marker] | None = None) -> Mesh:
    """Uniform hex grid; the 3D analogue of :func:`rect_grid`."""
    return _build_grid((nx, ny, nz), bounds, marker_assignment)


def element_jacobian(m: Mesh, e: int, ref_pt) -> float:
    """Determinant of the multilinear map gradient of element ``e`` at ``ref_pt``."""
    dN = shape_gradients(m.dim, ref_pt)[0]
    J = m.node_coords[m.elements[e]].T @ dN
    return float(np.linalg.det(J))


def _check_points(dim: int) -> np.ndarray:
    gp, _ = gauss_points(dim)
    return np.vstack([gp, REF_VERTICES[dim]])


def element_min_jacobians(m: Mesh) -> np.ndarray:
    """Per-element minimum of the Jacobian over Gauss points and corners."""
    return m.jacobians(_check_points(m.dim)).min(axis=1)


def min_jacobian(m: Mesh) -> float:
    return float(element_min_jacobians(m).min())


def total_volume(m: Mesh) -> float:
    gp, gw = gauss_points(m.dim)
    return float((m.jacobians(gp) @ gw).sum())


@dataclass(eq=False)
class SubdivisionMap:
    """Result of :func:`subdivide`.

    ``node_origin[i]`` is ``("node", coarse_node)`` for fine nodes that are
    coarse vertices, otherwise ``("element", coarse_element, ref)`` with
    ``ref`` the lattice point in ``[0,1]^dim`` of the first coarse element
    that produced it. ``lattice[e]`` lists the ``(p+1)^dim`` fine node ids of
    coarse element ``e`` in lexicographic order (x fastest).
    """

    fine_mesh: Mesh
    p: int
    node_origin: list
    elem_origin: np.ndarray
    lattice: np.ndarray

    def inherited_nodes(self) -> np.ndarray:
        return np.array([i for i, o in enumerate(self.node_origin) if o[0] == "node"], dtype=np.int64)


def lattice_points(dim: int, p: int) -> np.ndarray:
    """Integer lattice ``{0..p}^dim`` in lexicographic order, x fastest."""
    return np.array(list(itertools.product(range(p + 1), repeat=dim)), dtype=np.int64)[:, ::-1]


def lattice_index(ijk, p: int) -> int:
    return int(sum(c * (p + 1) ** k for k, c in enumerate(ijk)))


def subdivide(m: Mesh, p: int) -> SubdivisionMap:
    """Split every cell into ``p^dim`` cells along its reference lattice.

    Shared nodes are identified through exact integer multilinear weights on
    the coarse vertex ids, never through floating-point coordinates.
    """
    if p < 2:
        raise ValueError(f"subdivision order must be >= 2, got {p}")
    dim = m.dim
    lat = lattice_points(dim, p)
    verts = REF_VERTICES[dim].astype(np.int64)
    # integer multilinear weights (scaled by p^dim) of every lattice point on each vertex
    weights = np.ones((lat.shape[0], verts.shape[0]), dtype=np.int64)
    for k in range(dim):
        weights *= np.where(verts[None, :, k] == 1, lat[:, k:k + 1], p - lat[:, k:k + 1])
    ref = lat / p
    N = shape_values(dim, ref)
    full = p ** dim

    key_to_id: dict = {}
    coords: list = []
    origin: list = []
    lattice = np.empty((m.n_elements, lat.shape[0]), dtype=np.int64)
    for e, conn in enumerate(m.elements):
        X = m.node_coords[conn]
        for q in range(lat.shape[0]):
            nz = np.flatnonzero(weights[q])
            key = tuple(sorted((int(conn[a]), int(weights[q, a])) for a in nz))
            nid = key_to_id.get(key)
            if nid is None:
                nid = len(coords)
                key_to_id[key] = nid
                if len(key) == 1 and key[0][1] == full:
                    coords.append(m.node_coords[key[0][0]].copy())
                    origin.append(("node", key[0][0]))
                else:
                    coords.append(N[q] @ X)
                    origin.append(("element", e, tuple(float(r) for r in ref[q])))
            lattice[e, q] = nid

    cells = lattice_points(dim, p - 1)
    stride = np.array([(p + 1) ** k for k in range(dim)])
    local = ((cells[:, None, :] + verts[None, :, :]) * stride).sum(axis=2)
    fine_elements = lattice[:, local].reshape(-1, verts.shape[0])
    elem_origin = np.repeat(np.arange(m.n_elements), cells.shape[0])

    facets = []
    for e, lf, mk in m.boundary_facets:
        axis, s, _ = FACETS[dim][lf]
        on = np.flatnonzero(cells[:, axis] == (p - 1 if s else 0))
        facets.extend((int(e * cells.shape[0] + c), int(lf), int(mk)) for c in on)
    facets.sort()
    fine = Mesh(dim, np.array(coords), fine_elements, np.array(facets, dtype=np.int64), m.markers)
    return SubdivisionMap(fine, p, origin, elem_origin, lattice)


def mesh_to_dict(m: Mesh) -> dict:
    return {
        "dim": m.dim,
        "nodes": m.node_coords.tolist(),
        "elements": m.elements.tolist(),
        "facets": [[int(e), int(lf), m.markers[mk].name] for e, lf, mk in m.boundary_facets],
        "markers": [{"name": mk.name, "kind": mk.kind, "axis": mk.axis} for mk in m.markers],
    }


def mesh_from_dict(data: dict) -> Mesh:
    if not isinstance(data, dict):
        raise MeshFormatError("top level must be an object")
    missing = {"dim", "nodes", "elements", "facets", "markers"} - data.keys()
    if missing:
        raise MeshFormatError(f"missing field(s): {sorted(missing)}")
    dim = data["dim"]
    if dim not in (2, 3):
        raise MeshFormatError(f"dim: expected 2 or 3, got {dim!r}")
    markers = []
    for i, mk in enumerate(data["markers"]):
        try:
            markers.append(Marker(mk["name"], mk["kind"], mk.get("axis")))
        except (KeyError, TypeError, ValueError) as exc:
            raise MeshFormatError(f"markers[{i}]: {exc}") from None
    names = {mk.name: i for i, mk in enumerate(markers)}
    nodes = data["nodes"]
    for i, x in enumerate(nodes):
        if not isinstance(x, list) or len(x) != dim or not all(isinstance(c, (int, float)) for c in x):
            raise MeshFormatError(f"nodes[{i}]: expected {dim} numbers, got {x!r}")
    nv = 2 ** dim
    for i, conn in enumerate(data["elements"]):
        if not isinstance(conn, list) or len(conn) != nv or not all(isinstance(c, int) for c in conn):
            raise MeshFormatError(f"elements[{i}]: expected {nv} integer node ids, got {conn!r}")
    facets = []
    for i, f in enumerate(data["facets"]):
        if not isinstance(f, list) or len(f) != 3 or f[2] not in names:
            raise MeshFormatError(f"facets[{i}]: expected [element, local_facet, marker_name], got {f!r}")
        facets.append((f[0], f[1], names[f[2]]))
    return Mesh(dim, np.array(nodes, dtype=float).reshape(-1, dim),
                np.array(data["elements"], dtype=np.int64).reshape(-1, nv),
                np.array(facets, dtype=np.int64).reshape(-1, 3), tuple(markers))


def save_mesh(m: Mesh, path) -> None:
    """Write the native JSON format. Floats use shortest round-trip repr."""
    Path(path).write_text(json.dumps(mesh_to_dict(m), indent=1) + "\n")


def load_mesh(path) -> Mesh:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return mesh_from_dict(data)
