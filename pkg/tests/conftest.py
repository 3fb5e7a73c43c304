from __future__ import annotations

import contextlib
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

import defmesh.lsfem as lsfem
from defmesh.config import load_config
from defmesh.deform import RunConfig, run_algorithm1
from defmesh.geometry import BoundaryMotion, Sphere, Target
from defmesh.hoe import build_hoe
from defmesh.mesh import Marker, box_grid, rect_grid
from defmesh.monitor import MonitorSpec
from defmesh.pipeline import generate
from defmesh.refine import plan_refinement, refine_and_conform

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
GOLDEN = Path(__file__).resolve().parent / "golden"
R = 1.25


class SolveLog:
    """Relative residuals of LSFEM solves, recomputed with scipy, grouped by label."""

    def __init__(self):
        self.records: list[tuple[str, float]] = []
        self.label = "unlabelled"

    @contextlib.contextmanager
    def scenario(self, label):
        prev, self.label = self.label, label
        try:
            yield
        finally:
            self.label = prev

    def for_labels(self, labels):
        return [(lab, r) for lab, r in self.records if lab in labels]


_LOG = SolveLog()
_orig_cg = lsfem.cg_solve


def _recording_cg(A, b, **kw):
    x, report = _orig_cg(A, b, **kw)
    M = sp.csr_matrix((A.values, A.col_indices, A.row_offsets), shape=A.shape)
    bn = np.linalg.norm(b)
    rel = float(np.linalg.norm(b - M @ x) / bn) if bn > 0 else float(np.linalg.norm(M @ x))
    _LOG.records.append((_LOG.label, rel))
    return x, report


@pytest.fixture(scope="session", autouse=True)
def solve_log():
    mp = pytest.MonkeyPatch()
    mp.setattr(lsfem, "cg_solve", _recording_cg)
    yield _LOG
    mp.undo()


def quarter_disk_grid(n=4):
    arc = Marker("arc", "moving")
    return rect_grid(n, n, marker_assignment={"left": Marker("left", "slippery"),
                                              "bottom": Marker("bottom", "slippery"),
                                              "right": arc, "top": arc})


def quarter_ball_grid(n=4):
    arc = Marker("sphere", "moving")
    return box_grid(n, n, n, marker_assignment={"xmin": Marker("x0", "slippery"), "ymin": Marker("y0", "slippery"),
                                                "zmin": Marker("z0", "slippery"),
                                                "xmax": arc, "ymax": arc, "zmax": arc})


@pytest.fixture(scope="session")
def disk_motion():
    return BoundaryMotion({"arc": Target(Sphere((0.0, 0.0), R))})


@pytest.fixture(scope="session")
def ball_motion():
    return BoundaryMotion({"sphere": Target(Sphere((0.0, 0.0, 0.0), R))})


@pytest.fixture(scope="session")
def quarter_disk(solve_log, disk_motion):
    """A1: (initial mesh, final coarse mesh, history)."""
    m0 = quarter_disk_grid()
    with solve_log.scenario("A1"):
        mesh, hist = run_algorithm1(m0, MonitorSpec(), disk_motion, RunConfig(dt=0.05))
    return m0, mesh, hist


@pytest.fixture(scope="session")
def quarter_ball(solve_log, ball_motion):
    m0 = quarter_ball_grid()
    with solve_log.scenario("A2"):
        mesh, hist = run_algorithm1(m0, MonitorSpec(), ball_motion, RunConfig(dt=0.05))
    return m0, mesh, hist


@pytest.fixture(scope="session")
def disk_refined(solve_log, quarter_disk, disk_motion):
    """A6: (plan, conformed fine mesh, subdivision, history)."""
    coarse = quarter_disk[1]
    plan = plan_refinement(coarse, 3, disk_motion, 0.1)
    with solve_log.scenario("A6"):
        fine, sub, hist = refine_and_conform(coarse, 3, disk_motion, RunConfig(dt=0.1))
    return plan, fine, sub, hist


@pytest.fixture(scope="session")
def ball_refined(solve_log, quarter_ball, ball_motion):
    coarse = quarter_ball[1]
    plan = plan_refinement(coarse, 3, ball_motion, 0.1)
    with solve_log.scenario("A8"):
        fine, sub, hist = refine_and_conform(coarse, 3, ball_motion, RunConfig(dt=0.1))
    return plan, fine, sub, hist


@pytest.fixture(scope="session")
def disk_hoe(quarter_disk, disk_refined):
    _, fine, sub, _ = disk_refined
    return build_hoe(quarter_disk[1], fine, sub)


@pytest.fixture(scope="session")
def ball_hoe(quarter_ball, ball_refined):
    _, fine, sub, _ = ball_refined
    return build_hoe(quarter_ball[1], fine, sub)


@pytest.fixture(scope="session")
def ellipse_run(solve_log):
    with solve_log.scenario("A5"):
        return generate(load_config(CONFIGS / "ellipse_interface.toml"))


ACCEPTANCE: dict[str, str] = {}


def record_acceptance(key: str, ok: bool, detail: str) -> None:
    line = f"{key} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE[key] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE[key])
