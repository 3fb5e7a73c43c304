"""Turn a :class:`PipelineConfig` into meshes: coarse morph, refinement, high-order cells."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .deform import HistoryRecord, RunConfig, run_algorithm1
from .geometry import BoundaryMotion, Target
from .hoe import HighOrderMesh, build_hoe, edge_deviation, hoe_jacobians
from .mesh import Marker, Mesh, SubdivisionMap, box_grid, rect_grid
from .monitor import InterfaceSource, MonitorSpec, UniformSource, load_grayscale
from .refine import refine_and_conform

log = logging.getLogger(__name__)


def initial_mesh(cfg: PipelineConfig) -> Mesh:
    g = cfg.grid
    markers = {side: Marker(m.name or side, m.kind) for side, m in g.markers.items()}
    if g.dim == 2:
        bounds = g.bounds or [[0.0, 0.0], [1.0, 1.0]]
        return rect_grid(*g.resolution, bounds=bounds, marker_assignment=markers)
    bounds = g.bounds or [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]
    return box_grid(*g.resolution, bounds=bounds, marker_assignment=markers)


def boundary_motion(cfg: PipelineConfig) -> BoundaryMotion:
    return BoundaryMotion({name: Target(t.shape.build(), t.resolved_projection())
                           for name, t in cfg.targets.items()})


def monitor_spec(cfg: PipelineConfig) -> MonitorSpec:
    mc = cfg.monitor
    if mc.source == "uniform":
        source = UniformSource()
    elif mc.source == "interface":
        source = InterfaceSource(mc.base, mc.focus, mc.shape.build(), mc.width)
    else:
        d = cfg.grid.dim
        bbox = mc.bbox or cfg.grid.bounds or [[0.0] * d, [1.0] * d]
        source = load_grayscale(mc.image, mc.f_range, bbox)
    return MonitorSpec(source, mc.f_floor)


def run_config(cfg: PipelineConfig, refine: bool = False) -> RunConfig:
    r = cfg.run
    return RunConfig(dt=r.dt_refine if refine else r.dt, T=r.T, tol_cg=r.tol_cg,
                     fold_action=r.fold_action, max_retries=r.max_retries)


@dataclass(eq=False)
class PipelineResult:
    """Whatever stages ran; later stages are ``None`` when not requested."""

    config: PipelineConfig
    initial: Mesh
    coarse: Mesh
    history: list[HistoryRecord]
    refined: Mesh | None = None
    subdivision: SubdivisionMap | None = None
    refine_history: list[HistoryRecord] = field(default_factory=list)
    hoe: HighOrderMesh | None = None

    def summary(self) -> dict:
        h = self.history
        out = {
            "scenario": self.config.scenario,
            "steps": len(h) - 1,
            "final_min_jacobian": h[-1].min_jacobian,
            "min_jacobian_over_run": min(r.min_jacobian for r in h),
            "final_volume": h[-1].volume,
            "equidistribution_residual": h[-1].equidistribution_residual,
            "cg_iterations_total": sum(r.cg_iterations for r in h),
        }
        if self.refined is not None:
            rh = self.refine_history
            out["refined_nodes"] = self.refined.n_nodes
            out["refined_min_jacobian"] = min(r.min_jacobian for r in rh)
            out["refined_volume"] = rh[-1].volume
            out["refine_cg_iterations_total"] = sum(r.cg_iterations for r in rh)
        if self.hoe is not None:
            out["hoe_min_jacobian"] = float(hoe_jacobians(self.hoe).min())
            out["edge_deviation"] = self.edge_deviations()
        return out

    def edge_deviations(self) -> dict:
        """Per moving marker: linear and order-p deviation from the target and their ratio."""
        out = {}
        for name, t in self.config.targets.items():
            shape = t.shape.build()
            lin = edge_deviation(self.coarse, name, shape)
            high = edge_deviation(self.hoe, name, shape)
            out[name] = {"linear": lin, "high_order": high, "ratio": lin / high if high > 0 else float("inf")}
        return out


def generate(cfg: PipelineConfig, mesh0: Mesh | None = None) -> PipelineResult:
    mesh0 = mesh0 if mesh0 is not None else initial_mesh(cfg)
    log.info("generate %s: %d nodes, %d elements", cfg.scenario, mesh0.n_nodes, mesh0.n_elements)
    coarse, history = run_algorithm1(mesh0, monitor_spec(cfg), boundary_motion(cfg), run_config(cfg))
    return PipelineResult(cfg, mesh0, coarse, history)


def refine(cfg: PipelineConfig) -> PipelineResult:
    res = generate(cfg)
    log.info("refine: p=%d, dt=%g", cfg.order, cfg.run.dt_refine)
    res.refined, res.subdivision, res.refine_history = refine_and_conform(
        res.coarse, cfg.order, boundary_motion(cfg), run_config(cfg, refine=True))
    return res


def high_order(cfg: PipelineConfig) -> PipelineResult:
    res = refine(cfg)
    res.hoe = build_hoe(res.coarse, res.refined, res.subdivision)
    bad = np.flatnonzero(hoe_jacobians(res.hoe).min(axis=1) <= 0)
    if bad.size:
        # typically cells with two facets on a smooth target: the exact map is singular at the shared vertex
        log.warning("order-%d mesh has %d cell(s) with non-positive Jacobian: %s", cfg.order, bad.size,
                    bad[:10].tolist())
    return res


def jacobian_ratio(m: Mesh, initial: Mesh) -> np.ndarray:
    """Per-element ``J / J0`` at the center, used to color SVG output."""
    c = np.full((1, m.dim), 0.5)
    return m.jacobians(c)[:, 0] / initial.jacobians(c)[:, 0]
