"""Target shapes, projection onto them, and prescribed boundary motion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np

from .mesh import GAUSS_1D, Marker, Mesh

Projection = Literal["radial", "closest"]


class ProjectionError(ValueError):
    pass


class ImplicitShape:
    """A level function ``level(x)`` that is negative inside."""

    def level(self, x) -> np.ndarray:
        raise NotImplementedError

    def project(self, x, mode: Projection = "closest") -> np.ndarray:
        raise NotImplementedError

    def distance(self, x) -> np.ndarray:
        """Unsigned Euclidean distance to the zero level set."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.linalg.norm(x - np.array([self.project(xi, "closest") for xi in x]), axis=1)


@dataclass(frozen=True)
class Sphere(ImplicitShape):
    """Circle in 2D, sphere in 3D."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def level(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def project(self, x, mode: Projection = "radial"):
        c = np.asarray(self.center, dtype=float)
        d = np.asarray(x, dtype=float) - c
        n = np.linalg.norm(d)
        if n == 0.0:
            raise ProjectionError(f"cannot project the center {tuple(c)} of a sphere")
        return c + self.radius * d / n

    def distance(self, x):
        return np.abs(self.level(np.atleast_2d(x)))


@dataclass(frozen=True)
class Ellipsoid(ImplicitShape):
    """Axis-aligned ellipse (2D) or ellipsoid (3D).

    The level function is ``(q - 1) * min(semi_axes)`` with ``q`` the scaled
    radius, so it approximates signed distance near the surface.
    """

    center: tuple[float, ...]
    semi_axes: tuple[float, ...]

    def __post_init__(self):
        if len(self.center) != len(self.semi_axes) or min(self.semi_axes) <= 0:
            raise ValueError(f"bad ellipsoid center={self.center} semi_axes={self.semi_axes}")

    def level(self, x):
        y = (np.asarray(x, dtype=float) - np.asarray(self.center)) / np.asarray(self.semi_axes)
        return (np.linalg.norm(y, axis=-1) - 1.0) * min(self.semi_axes)

    def project(self, x, mode: Projection = "closest"):
        c = np.asarray(self.center, dtype=float)
        a = np.asarray(self.semi_axes, dtype=float)
        y = np.asarray(x, dtype=float) - c
        if mode == "radial":
            q = np.linalg.norm(y / a)
            if q == 0.0:
                raise ProjectionError(f"cannot radially project the center {tuple(c)}")
            return c + y / q
        return c + _ellipsoid_foot_point(a, y)


def _ellipsoid_foot_point(a: np.ndarray, y: np.ndarray, max_iter: int = 50) -> np.ndarray:
    """Nearest point on ``sum((z/a)^2) = 1`` to ``y`` (ellipsoid centered at 0).

    The foot point is ``z = a^2 y / (a^2 + lam)`` where ``lam`` is the root of
    ``F(lam) = sum((a y / (a^2 + lam))^2) - 1`` above ``-min(a^2)``. ``F`` is
    convex and decreasing there, so Newton started left of the root climbs
    monotonically onto it.
    """
    sign = np.where(y < 0, -1.0, 1.0)
    # components this small would lose all digits in a^2 + lam; snapping them moves the foot point by O(1e-12 a)
    y = np.abs(y)
    y = np.where(y <= 1e-12 * a.min(), 0.0, y)
    a2 = a * a
    shortest = a == a.min()
    k = int(np.argmin(a))
    if not np.any(y[shortest]):
        # y lies in the plane of the longer axes: the foot point may leave that plane
        longer = ~shortest
        z = np.zeros_like(y)
        z[longer] = a2[longer] * y[longer] / (a2[longer] - a2[k])
        s = float(np.sum((z[longer] / a[longer]) ** 2))
        if s <= 1.0:
            z[k] = a[k] * math.sqrt(1.0 - s)
            return sign * z
    pos = y > 0
    # Newton in s = lam + min(a^2): the shortest-axis denominator is then exact,
    # which keeps near-center points accurate
    d = a2 - a2[k]
    s = float(np.max(a[pos] * y[pos] - d[pos]))
    for it in range(max_iter):
        t = a[pos] * y[pos] / (d[pos] + s)
        F = float(np.sum(t * t) - 1.0)
        dF = float(-2.0 * np.sum(t * t / (d[pos] + s)))
        if dF == 0.0:
            break
        step = F / dF
        s -= step
        if abs(step) <= 1e-15 * max(abs(s), 1e-300) or abs(F) <= 1e-15:
            return sign * (a2 * y / (d + s))
    z = a2 * y / (d + s)
    res = abs(float(np.sum((z / a) ** 2) - 1.0))
    if res > 1e-12:
        raise ProjectionError(f"closest-point Newton did not converge in {max_iter} iterations (residual {res:.3e})")
    return sign * z


@dataclass(frozen=True)
class HalfSpace(ImplicitShape):
    """``(x - point) . normal <= 0``."""

    point: tuple[float, ...]
    normal: tuple[float, ...]

    def _unit(self):
        n = np.asarray(self.normal, dtype=float)
        return n / np.linalg.norm(n)

    def level(self, x):
        return (np.asarray(x, dtype=float) - np.asarray(self.point)) @ self._unit()

    def project(self, x, mode: Projection = "closest"):
        x = np.asarray(x, dtype=float)
        n = self._unit()
        return x - ((x - np.asarray(self.point)) @ n) * n

    def distance(self, x):
        return np.abs(self.level(np.atleast_2d(x)))


@dataclass(frozen=True)
class QuarterDomain(ImplicitShape):
    """A shape clipped to ``x_i >= 0`` for the listed wall axes.

    Projection and distance refer to the curved part only; the walls are
    handled by slippery markers.
    """

    shape: ImplicitShape
    walls: tuple[int, ...] = ()

    def level(self, x):
        x = np.asarray(x, dtype=float)
        out = self.shape.level(x)
        for k in self.walls:
            out = np.maximum(out, -x[..., k])
        return out

    def project(self, x, mode: Projection = "radial"):
        return self.shape.project(x, mode)

    def distance(self, x):
        return self.shape.distance(x)


def project(shape: ImplicitShape, x, mode: Projection = "radial") -> np.ndarray:
    return shape.project(np.asarray(x, dtype=float), mode)


@dataclass(frozen=True)
class Target:
    shape: ImplicitShape
    projection: Projection = "radial"


@dataclass(frozen=True)
class SlipConstraint:
    """Zero velocity along ``axis``; the other components are free."""

    axis: int


@dataclass
class BoundaryMotion:
    """Targets for moving markers. Slippery and fixed rules come from the marker kind."""

    targets: Mapping[str, Target] = field(default_factory=dict)

    def boundary_velocity(self, marker: Marker, x0):
        """Constant velocity of a node starting at ``x0`` over ``t in [0, 1]``."""
        x0 = np.asarray(x0, dtype=float)
        if marker.kind == "fixed":
            return np.zeros_like(x0)
        if marker.kind == "slippery":
            return SlipConstraint(marker.axis)
        try:
            tgt = self.targets[marker.name]
        except KeyError:
            raise KeyError(f"moving marker {marker.name!r} has no target") from None
        return tgt.shape.project(x0, tgt.projection) - x0


@dataclass
class NodeMotion:
    """Per-node boundary data for a run.

    ``prescribed[i, k]`` marks velocity components fixed to ``velocity[i, k]``
    (zero for slippery axes and fixed nodes). ``slip`` lists ``(node, axis)``
    zero-normal constraints, a subset of the prescribed components.
    """

    velocity: np.ndarray
    prescribed: np.ndarray
    slip: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def stationary(cls, m: Mesh) -> "NodeMotion":
        return cls(np.zeros((m.n_nodes, m.dim)), np.zeros((m.n_nodes, m.dim), dtype=bool))


def node_motion(m: Mesh, motion: BoundaryMotion) -> NodeMotion:
    """Resolve every boundary node's markers into prescribed velocity components.

    A fixed marker pins the node. Otherwise a moving marker sets the
    velocity, with components along any slippery axis zeroed so corners slide
    along their walls. Two moving markers with different targets on one node
    are rejected.
    """
    n, d = m.n_nodes, m.dim
    vel = np.zeros((n, d))
    pres = np.zeros((n, d), dtype=bool)
    slip: list[tuple[int, int]] = []
    for i, names in enumerate(m.node_markers):
        if not names:
            continue
        mks = [m.marker(nm) for nm in sorted(names)]
        if any(mk.kind == "fixed" for mk in mks):
            pres[i] = True
            continue
        moving = [mk for mk in mks if mk.kind == "moving"]
        if moving:
            tgts = [motion.targets.get(mk.name) for mk in moving]
            if any(t != tgts[0] for t in tgts[1:]):
                raise ValueError(f"node {i} carries conflicting moving markers {[mk.name for mk in moving]}")
            vel[i] = motion.boundary_velocity(moving[0], m.node_coords[i])
            pres[i] = True
        for mk in mks:
            if mk.kind == "slippery":
                vel[i, mk.axis] = 0.0
                pres[i, mk.axis] = True
                slip.append((i, mk.axis))
    return NodeMotion(vel, pres, slip)


def facet_normal(m: Mesh, facet: int) -> np.ndarray:
    """Outward unit normal of a boundary facet at its midpoint."""
    e, lf, _ = m.boundary_facets[facet]
    X = m.node_coords[m.facet_nodes(facet)]
    if m.dim == 2:
        t = X[1] - X[0]
        n = np.array([t[1], -t[0]])
    else:
        n = np.cross(X[2] - X[0], X[3] - X[1])
    length = np.linalg.norm(n)
    if length <= 1e-14 * max(1.0, np.abs(X).max()):
        raise ValueError(f"degenerate facet {facet} (element {e}, local facet {lf})")
    n = n / length
    if n @ (X.mean(axis=0) - m.node_coords[m.elements[e]].mean(axis=0)) < 0:
        n = -n
    return n


def facet_quadrature(m: Mesh, facets=None):
    """Gauss points on boundary facets.

    Returns ``(facet ids, facet node ids (nf, nfv), shape values (nq, nfv),
    points (nf, nq, dim), weighted normals (nf, nq, dim))``; summing
    ``wn . F(x)`` integrates ``F . n`` over the facets.
    """
    if facets is None:
        facets = np.arange(m.boundary_facets.shape[0])
    facets = np.asarray(facets, dtype=np.int64)
    pts, wts = GAUSS_1D
    nodes = np.array([m.facet_nodes(f) for f in facets], dtype=np.int64).reshape(len(facets), -1)
    X = m.node_coords[nodes]
    if m.dim == 2:
        N = np.column_stack([1 - pts, pts])
        t = X[:, 1] - X[:, 0]
        nrm = np.column_stack([t[:, 1], -t[:, 0]])
        wn = wts[None, :, None] * nrm[:, None, :]
    else:
        s, r = np.meshgrid(pts, pts, indexing="xy")
        s, r = s.ravel(), r.ravel()
        w = np.outer(wts, wts).ravel()
        N = np.column_stack([(1 - s) * (1 - r), s * (1 - r), s * r, (1 - s) * r])
        dNs = np.column_stack([-(1 - r), 1 - r, r, -r])
        dNr = np.column_stack([-(1 - s), -s, s, 1 - s])
        xs = np.einsum("qa,fai->fqi", dNs, X)
        xr = np.einsum("qa,fai->fqi", dNr, X)
        wn = w[None, :, None] * np.cross(xs, xr)
    pts_phys = np.einsum("qa,fai->fqi", N, X)
    return facets, nodes, N, pts_phys, wn
