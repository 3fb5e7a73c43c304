"""Subdivide a coarse mesh and deform the new boundary nodes onto the target shape."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .deform import RunConfig, run_algorithm1
from .geometry import BoundaryMotion, NodeMotion
from .mesh import Mesh, SubdivisionMap, subdivide
from .monitor import MonitorSpec, UniformSource

DEFAULT_DT_REFINE = 0.1


class NodeClass(IntEnum):
    INTERIOR = 0
    OLD_BOUNDARY = 1  # coarse boundary vertex, pinned
    NEW_BOUNDARY = 2  # created on a moving facet, sent to its projection
    SLIPPERY = 3  # on a slippery wall only, slides along it
    FIXED = 4  # created on a fixed facet


@dataclass(eq=False)
class RefinePlan:
    subdivision: SubdivisionMap
    node_classes: np.ndarray
    targets: np.ndarray  # per-node end positions; equal to the start for non-moving nodes
    motion: NodeMotion
    dt_refine: float = DEFAULT_DT_REFINE


def plan_refinement(coarse: Mesh, p: int, target: BoundaryMotion, dt_refine: float = DEFAULT_DT_REFINE) -> RefinePlan:
    """Subdivide ``coarse`` and classify every fine node.

    Coarse boundary vertices are pinned. Other nodes on a moving facet get a
    straight-line path to their projection; along slippery axes that path is
    zeroed, so nodes on a wall/moving edge stay on the wall. Nodes on slippery
    walls only are free to slide.
    """
    sub = subdivide(coarse, p)
    fine = sub.fine_mesh
    n, d = fine.n_nodes, fine.dim
    classes = np.full(n, NodeClass.INTERIOR, dtype=np.int64)
    vel = np.zeros((n, d))
    pres = np.zeros((n, d), dtype=bool)
    slip: list[tuple[int, int]] = []
    inherited = np.zeros(n, dtype=bool)
    inherited[sub.inherited_nodes()] = True

    # half the shortest incident coarse edge, per coarse vertex
    edge_len = np.full(coarse.n_nodes, np.inf)
    if coarse.dim == 2:
        pairs = [(0, 1), (1, 2), (2, 3), (3, 0)]
    else:
        pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)]
    for a, b in pairs:
        L = np.linalg.norm(coarse.node_coords[coarse.elements[:, a]] - coarse.node_coords[coarse.elements[:, b]], axis=1)
        np.minimum.at(edge_len, coarse.elements[:, a], L)
        np.minimum.at(edge_len, coarse.elements[:, b], L)

    for i, names in enumerate(fine.node_markers):
        if not names:
            continue
        if inherited[i]:
            classes[i] = NodeClass.OLD_BOUNDARY
            pres[i] = True
            continue
        mks = [fine.marker(nm) for nm in sorted(names)]
        if any(mk.kind == "fixed" for mk in mks):
            classes[i] = NodeClass.FIXED
            pres[i] = True
            continue
        moving = [mk for mk in mks if mk.kind == "moving"]
        if moving:
            tgts = [target.targets.get(mk.name) for mk in moving]
            if any(t != tgts[0] for t in tgts[1:]):
                raise ValueError(f"fine node {i} carries conflicting moving markers {[mk.name for mk in moving]}")
            classes[i] = NodeClass.NEW_BOUNDARY
            vel[i] = target.boundary_velocity(moving[0], fine.node_coords[i])
            pres[i] = True
        else:
            classes[i] = NodeClass.SLIPPERY
        for mk in mks:
            if mk.kind == "slippery":
                vel[i, mk.axis] = 0.0
                pres[i, mk.axis] = True
                slip.append((i, mk.axis))
        if classes[i] == NodeClass.NEW_BOUNDARY:
            origin = sub.node_origin[i]
            local = 0.5 * edge_len[coarse.elements[origin[1]]].min()
            dist = np.linalg.norm(vel[i])
            if dist > local:
                warnings.warn(f"fine node {i} moves {dist:.3g}, more than half the local coarse edge "
                              f"({local:.3g}); the refined mesh may tangle", RuntimeWarning, stacklevel=2)
    motion = NodeMotion(vel, pres, slip)
    return RefinePlan(sub, classes, fine.node_coords + vel, motion, dt_refine)


def refine_and_conform(coarse: Mesh, p: int, target: BoundaryMotion, cfg: RunConfig | None = None):
    """Subdivide ``coarse`` and run the deformation on the fine mesh.

    The monitor is uniform, so the deformation is driven by the boundary
    alone. Returns ``(conformed mesh, subdivision map, history)``.
    """
    cfg = cfg or RunConfig(dt=DEFAULT_DT_REFINE)
    plan = plan_refinement(coarse, p, target, cfg.dt)
    fine = plan.subdivision.fine_mesh
    mesh, history = run_algorithm1(fine, MonitorSpec(UniformSource()), plan.motion, cfg)
    return mesh, plan.subdivision, history
