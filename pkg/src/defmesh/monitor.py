"""
Prescribed Jacobian f(x, t).

The blend is reciprocal-linear in time,

    1/f(x, t) = k(t) * ((1 - t) + t / f1(x)),

with ``f1`` the target normalized on the initial mesh and ``k(t)`` the volume
factor ``|Omega_0| / integral((1 - t) + t / f1)`` over the current mesh. On a
fixed domain ``k`` stays at 1 (up to quadrature drift); for a uniform target
it reduces to ``f = V(t) / |Omega_0|``. The constraint
``integral(1/f) = |Omega_0|`` therefore holds on the current mesh's
quadrature at every step.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ImplicitShape, facet_quadrature
from .mesh import Mesh, gauss_points, shape_values

F_FLOOR = 1e-3


class MonitorError(ValueError):
    pass


class UniformSource:
    def __call__(self, x):
        return np.ones(np.asarray(x).shape[:-1])

    def __repr__(self):
        return "UniformSource()"


@dataclass(frozen=True)
class InterfaceSource:
    """``base - (base - focus) * exp(-(level(x) / width)^2)``.

    ``focus < base`` concentrates cells along the zero level set of ``shape``.
    """

    base: float
    focus: float
    shape: ImplicitShape
    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"width must be positive, got {self.width}")

    def __call__(self, x):
        psi = self.shape.level(np.asarray(x, dtype=float))
        return self.base - (self.base - self.focus) * np.exp(-(psi / self.width) ** 2)


@dataclass(frozen=True, eq=False)
class GrayscaleSource:
    """Raster monitor; pixel centers sampled bilinearly over ``bbox``.

    Row 0 of the image is the top of the box. Intensities map affinely onto
    ``f_range`` (black to ``f_min``).
    """

    values: np.ndarray  # (rows, cols) already mapped to f
    bbox: tuple  # ((xmin, ymin), (xmax, ymax))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        (x0, y0), (x1, y1) = self.bbox
        rows, cols = self.values.shape
        # continuous pixel coordinates; pixel centers sit at integer positions
        u = (x[..., 0] - x0) / (x1 - x0) * cols - 0.5
        v = (y1 - x[..., 1]) / (y1 - y0) * rows - 0.5
        u = np.clip(u, 0.0, cols - 1.0)
        v = np.clip(v, 0.0, rows - 1.0)
        j0 = np.minimum(np.floor(u).astype(int), max(cols - 2, 0))
        i0 = np.minimum(np.floor(v).astype(int), max(rows - 2, 0))
        j1 = np.minimum(j0 + 1, cols - 1)
        i1 = np.minimum(i0 + 1, rows - 1)
        fu = u - j0
        fv = v - i0
        V = self.values
        return ((1 - fv) * ((1 - fu) * V[i0, j0] + fu * V[i0, j1])
                + fv * ((1 - fu) * V[i1, j0] + fu * V[i1, j1]))

    def with_bbox(self, bbox) -> "GrayscaleSource":
        return GrayscaleSource(self.values, tuple(map(tuple, bbox)))


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a P2 (ASCII) or P5 (binary) PGM. Returns ``(pixels, maxval)``."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise MonitorError(f"{path}: not a PGM file (magic {magic!r})")
    # header tokens, skipping comments
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MonitorError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MonitorError(f"{path}: bad PGM header {tokens!r}") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise MonitorError(f"{path}: bad PGM header {width}x{height} maxval {maxval}")
    if magic == b"P2":
        body = data[pos:].split()
        if len(body) < width * height:
            raise MonitorError(f"{path}: expected {width * height} pixels, got {len(body)}")
        pix = np.array([int(t) for t in body[:width * height]], dtype=float)
    else:
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2" if maxval > 255 else np.uint8)
        n = width * height * dtype.itemsize
        if len(data) - pos < n:
            raise MonitorError(f"{path}: truncated P5 raster")
        pix = np.frombuffer(data[pos:pos + n], dtype=dtype).astype(float)
    return pix.reshape(height, width), maxval


def load_grayscale(path, f_range, bbox=((0.0, 0.0), (1.0, 1.0))) -> GrayscaleSource:
    f_min, f_max = f_range
    if f_min < F_FLOOR:
        raise MonitorError(f"f_min={f_min} is below the floor {F_FLOOR}")
    if f_max < f_min:
        raise MonitorError(f"f_range must be increasing, got {f_range}")
    pix, maxval = read_pgm(path)
    return GrayscaleSource(f_min + pix / maxval * (f_max - f_min), tuple(map(tuple, bbox)))


@dataclass(frozen=True, eq=False)
class MonitorSpec:
    source: object = UniformSource()
    f_floor: float = F_FLOOR


@dataclass(frozen=True, eq=False)
class Monitor:
    """A source normalized so that ``integral(1/f1) = volume0`` on the initial mesh."""

    source: object
    scale: float  # f1 = scale * f_raw
    volume0: float
    f_floor: float = F_FLOOR

    @property
    def uniform(self) -> bool:
        return isinstance(self.source, UniformSource)

    def target(self, x) -> np.ndarray:
        return self.scale * self.source(x)

    def inv_target(self, x) -> np.ndarray:
        return 1.0 / self.target(x)

    def blend(self, x, t: float) -> np.ndarray:
        """``(1 - t) + t / f1(x)``; equals ``1/f`` when the volume factor is 1."""
        return (1.0 - t) + t * self.inv_target(x)


def normalize_target(spec: MonitorSpec, m: Mesh) -> Monitor:
    """Scale the raw source so that its reciprocal integrates to the mesh volume."""
    gp, gw = gauss_points(m.dim)
    x = m.map_points(gp)
    raw = spec.source(x)
    low = raw < spec.f_floor
    if np.any(low):
        e, q = np.argwhere(low)[0]
        raise MonitorError(f"raw monitor {raw[e, q]:.3g} below floor {spec.f_floor} at {x[e, q].tolist()}")
    dets = m.jacobians(gp)
    vol = float((dets @ gw).sum())
    integral = float(((dets / raw) @ gw).sum())
    return Monitor(spec.source, integral / vol, vol, spec.f_floor)


def _check_t(t: float, T: float = 1.0):
    if not -1e-12 <= t <= T + 1e-12:
        raise MonitorError(f"t={t} outside [0, {T}]")


def eval_f(monitor: Monitor, x, t: float, scale: float = 1.0) -> np.ndarray:
    """``f(x, t)`` with volume factor ``scale``; checked against the floor."""
    _check_t(t)
    f = 1.0 / (scale * monitor.blend(x, t))
    if np.any(f < monitor.f_floor):
        raise MonitorError(f"f={np.min(f):.3g} fell below the floor {monitor.f_floor} at t={t}")
    return f


@dataclass(eq=False)
class RhsField:
    """``g = -d/dt(1/f)`` at element Gauss points (``qp``) and at nodes."""

    qp: np.ndarray
    nodal: np.ndarray
    scale: float = 1.0
    dscale: float = 0.0

    @classmethod
    def from_function(cls, m: Mesh, fn) -> "RhsField":
        gp, _ = gauss_points(m.dim)
        return cls(np.asarray(fn(m.map_points(gp)), dtype=float), np.asarray(fn(m.node_coords), dtype=float))

    @classmethod
    def from_nodal(cls, m: Mesh, values) -> "RhsField":
        values = np.asarray(values, dtype=float)
        gp, _ = gauss_points(m.dim)
        return cls(values[m.elements] @ shape_values(m.dim, gp).T, values)

    def integral(self, m: Mesh) -> float:
        gp, gw = gauss_points(m.dim)
        return float(((self.qp * m.jacobians(gp)) @ gw).sum())


def blend_integrals(monitor: Monitor, m: Mesh, t: float, velocity=None, moving_facets=None):
    """``I = integral(h)`` and ``dI/dt`` on the current mesh, ``h = (1-t) + t r``.

    ``dI/dt`` adds the boundary transport term ``integral(h v.n)`` over the
    facets when a nodal boundary ``velocity`` is given.
    """
    gp, gw = gauss_points(m.dim)
    x = m.map_points(gp)
    wdet = m.jacobians(gp) * gw
    r = monitor.inv_target(x)
    h = (1.0 - t) + t * r
    I = float((h * wdet).sum())
    dI = float(((r - 1.0) * wdet).sum())
    if velocity is not None and np.any(velocity):
        facets = moving_facets
        if facets is None:
            speed = np.linalg.norm(velocity, axis=1)
            facets = [i for i in range(m.boundary_facets.shape[0]) if np.any(speed[m.facet_nodes(i)] > 0)]
        if len(facets):
            _, nodes, N, xf, wn = facet_quadrature(m, facets)
            vq = np.einsum("qa,fai->fqi", N, velocity[nodes])
            hf = (1.0 - t) + t * monitor.inv_target(xf)
            dI += float((hf * np.einsum("fqi,fqi->fq", vq, wn)).sum())
    return I, dI


def volume_factor(monitor: Monitor, m: Mesh, t: float) -> float:
    I, _ = blend_integrals(monitor, m, t)
    return monitor.volume0 / I


def eval_g(monitor: Monitor, m: Mesh, t: float, velocity=None) -> RhsField:
    """Right-hand side ``g = -d/dt(1/f)`` on the current mesh at time ``t``.

    ``velocity`` is the nodal boundary velocity (zero off the moving
    boundary); it enters through the rate of change of the volume factor.
    """
    _check_t(t)
    I, dI = blend_integrals(monitor, m, t, velocity)
    k = monitor.volume0 / I
    dk = -k * dI / I
    gp, _ = gauss_points(m.dim)

    def g(x):
        r = monitor.inv_target(x)
        return -dk * ((1.0 - t) + t * r) - k * (r - 1.0)

    return RhsField(g(m.map_points(gp)), g(m.node_coords), k, dk)


def constraint_integral(monitor: Monitor, m: Mesh, t: float, scale: float | None = None) -> float:
    """``integral(1/f(x, t))`` over the current mesh by Gauss quadrature."""
    if scale is None:
        scale = volume_factor(monitor, m, t)
    gp, gw = gauss_points(m.dim)
    return float(((scale * monitor.blend(m.map_points(gp), t) * m.jacobians(gp)) @ gw).sum())


def equidistribution_residual(monitor: Monitor, m: Mesh, initial_coords, scale: float = 1.0) -> float:
    """``max |J / f_T - 1|`` at element centers, ``f_T = 1 / (scale / f1)``.

    ``J`` is the ratio of the current to the initial element Jacobian, i.e.
    the Jacobian of the map from the initial mesh.
    """
    c = np.full((1, m.dim), 0.5)
    J = m.jacobians(c)[:, 0] / m.with_coords(initial_coords).jacobians(c)[:, 0]
    xc = m.map_points(c)[:, 0]
    return float(np.max(np.abs(J * scale * monitor.inv_target(xc) - 1.0)))

