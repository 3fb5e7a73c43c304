import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import quarter_disk_grid
from defmesh.geometry import BoundaryMotion, Ellipsoid, Sphere, Target, facet_quadrature, node_motion
from defmesh.mesh import rect_grid
from defmesh.monitor import (InterfaceSource, MonitorError, MonitorSpec, RhsField, constraint_integral,
                             equidistribution_residual, eval_f, eval_g, load_grayscale, normalize_target, read_pgm,
                             volume_factor)

ELLIPSE = InterfaceSource(1.0, 0.25, Ellipsoid((0.5, 0.5), (0.3, 0.18)), 0.05)


def _warped(n=8):
    m = rect_grid(n, n)
    X = m.node_coords.copy()
    X += 0.03 * np.sin(np.pi * X[:, ::-1]) * np.sin(np.pi * X)
    return m.with_coords(X)


def test_uniform_monitor_is_identity():
    m = rect_grid(4, 4)
    mon = normalize_target(MonitorSpec(), m)
    assert mon.uniform and mon.scale == pytest.approx(1.0) and mon.volume0 == pytest.approx(1.0)
    assert np.allclose(eval_f(mon, m.node_coords, 0.7), 1.0)
    assert equidistribution_residual(mon, m, m.node_coords) == pytest.approx(0.0, abs=1e-14)


def test_normalization_integral():
    m = _warped()
    mon = normalize_target(MonitorSpec(ELLIPSE), m)
    assert constraint_integral(mon, m, 1.0, scale=1.0) == pytest.approx(mon.volume0, rel=1e-12)


@pytest.mark.parametrize("t", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_fixed_domain_blend_keeps_volume(t):
    m = _warped()
    mon = normalize_target(MonitorSpec(ELLIPSE), m)
    assert volume_factor(mon, m, t) == pytest.approx(1.0, abs=1e-8)
    assert constraint_integral(mon, m, t) == pytest.approx(mon.volume0, abs=1e-8)


@given(st.floats(0.0, 1.0))
@settings(max_examples=25, deadline=None)
def test_fixed_domain_rhs_integrates_to_zero(t):
    m = _warped(4)
    mon = normalize_target(MonitorSpec(ELLIPSE), m)
    g = eval_g(mon, m, t)
    assert abs(g.integral(m)) <= 1e-12
    assert g.dscale == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("source", [None, ELLIPSE])
@pytest.mark.parametrize("t", [0.0, 0.4])
def test_rhs_compatible_with_boundary_flux(source, t):
    # integral(g) must equal the flux of u = x'/f through the boundary
    m = quarter_disk_grid()
    spec = MonitorSpec() if source is None else MonitorSpec(source)
    mon = normalize_target(spec, m)
    nm = node_motion(m, BoundaryMotion({"arc": Target(Sphere((0.0, 0.0), 1.25))}))
    g = eval_g(mon, m, t, nm.velocity)
    _, nodes, N, xf, wn = facet_quadrature(m)
    vq = np.einsum("qa,fai->fqi", N, nm.velocity[nodes])
    inv_f = 1.0 / eval_f(mon, xf, t, g.scale)
    flux = float((inv_f * np.einsum("fqi,fqi->fq", vq, wn)).sum())
    assert flux > 0
    assert g.integral(m) == pytest.approx(flux, rel=1e-12)


def test_uniform_moving_rhs_is_constant():
    m = quarter_disk_grid()
    mon = normalize_target(MonitorSpec(), m)
    nm = node_motion(m, BoundaryMotion({"arc": Target(Sphere((0.0, 0.0), 1.25))}))
    g = eval_g(mon, m, 0.0, nm.velocity)
    assert np.allclose(g.qp, g.qp.flat[0]) and g.qp.flat[0] > 0


def test_time_outside_range_rejected():
    mon = normalize_target(MonitorSpec(), rect_grid(2, 2))
    with pytest.raises(MonitorError, match="outside"):
        eval_f(mon, np.zeros((1, 2)), 1.5)


def test_source_below_floor_rejected():
    src = InterfaceSource(1.0, 1e-5, Sphere((0.5, 0.5), 0.25), 0.5)
    with pytest.raises(MonitorError, match="floor"):
        normalize_target(MonitorSpec(src), rect_grid(8, 8))


def test_rhs_from_nodal_interpolates():
    m = rect_grid(2, 2)
    r = RhsField.from_nodal(m, m.node_coords[:, 0] + 2 * m.node_coords[:, 1])
    assert r.integral(m) == pytest.approx(0.5 + 1.0)


def _write_p2(path, rows, maxval=255, comment=True):
    h, w = len(rows), len(rows[0])
    head = f"P2\n{'# made by hand' + chr(10) if comment else ''}{w} {h}\n{maxval}\n"
    path.write_text(head + "\n".join(" ".join(map(str, r)) for r in rows) + "\n")


def test_read_p2_with_comment(tmp_path):
    _write_p2(tmp_path / "a.pgm", [[0, 255], [128, 64]])
    pix, maxval = read_pgm(tmp_path / "a.pgm")
    assert maxval == 255 and pix.tolist() == [[0, 255], [128, 64]]


@pytest.mark.parametrize("maxval,dtype", [(255, np.uint8), (1000, ">u2")])
def test_read_p5(tmp_path, maxval, dtype):
    data = np.array([[0, 7, maxval], [3, 2, 1]], dtype=dtype)
    (tmp_path / "b.pgm").write_bytes(f"P5 3 2\n{maxval}\n".encode() + data.tobytes())
    pix, mv = read_pgm(tmp_path / "b.pgm")
    assert mv == maxval and np.array_equal(pix, data.astype(float))


@pytest.mark.parametrize("content,msg", [(b"P6\n1 1\n255\n\x00", "not a PGM"), (b"P2\n2 2\n255\n1 2 3", "expected 4"),
                                         (b"P5\n2 2\n255\n\x00", "truncated"), (b"P2\n2", "truncated PGM header"),
                                         (b"P2\n0 2\n255\n", "bad PGM header")])
def test_bad_pgm(tmp_path, content, msg):
    (tmp_path / "c.pgm").write_bytes(content)
    with pytest.raises(MonitorError, match=msg):
        read_pgm(tmp_path / "c.pgm")


def test_grayscale_sampling(tmp_path):
    # 2x2 image: top row dark, bottom row bright
    _write_p2(tmp_path / "g.pgm", [[0, 0], [255, 255]])
    src = load_grayscale(tmp_path / "g.pgm", (0.5, 1.5))
    assert src(np.array([0.25, 0.75])) == pytest.approx(0.5)
    assert src(np.array([0.75, 0.25])) == pytest.approx(1.5)
    assert src(np.array([0.5, 0.5])) == pytest.approx(1.0)
    # clamped outside the pixel centers
    assert src(np.array([0.0, 1.0])) == pytest.approx(0.5)
    moved = src.with_bbox(((1.0, 1.0), (2.0, 2.0)))
    assert moved(np.array([1.25, 1.75])) == pytest.approx(0.5)


def test_grayscale_range_checks(tmp_path):
    _write_p2(tmp_path / "g.pgm", [[0, 255]])
    with pytest.raises(MonitorError, match="floor"):
        load_grayscale(tmp_path / "g.pgm", (1e-4, 1.0))
    with pytest.raises(MonitorError, match="increasing"):
        load_grayscale(tmp_path / "g.pgm", (1.0, 0.5))
