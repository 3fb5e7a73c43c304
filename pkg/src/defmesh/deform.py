"""Deformation time loop: div-curl solve plus explicit Euler node update."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .geometry import BoundaryMotion, NodeMotion, node_motion
from .lsfem import ConstraintSet, FoldedMeshError, solve_velocity
from .mesh import Mesh, element_min_jacobians, total_volume
from .monitor import (Monitor, MonitorSpec, constraint_integral, equidistribution_residual, eval_f, eval_g,
                      normalize_target, volume_factor)

log = logging.getLogger(__name__)

T_EPS = 1e-12


class FoldError(RuntimeError):
    """A step produced a non-positive Jacobian and retries were exhausted."""

    def __init__(self, t: float, element: int, min_jacobian: float):
        super().__init__(f"mesh folded at t={t:.6g}: element {element} has Jacobian {min_jacobian:.3e}")
        self.t = t
        self.element = element
        self.min_jacobian = min_jacobian


@dataclass(frozen=True)
class RunConfig:
    dt: float = 0.05
    T: float = 1.0
    tol_cg: float = 1e-10
    fold_action: Literal["halt", "retry-half-dt"] = "retry-half-dt"
    max_retries: int = 8
    record_history: bool = True

    def __post_init__(self):
        if not 0 < self.T <= 1:
            raise ValueError(f"T must be in (0, 1], got {self.T}")
        if not 0 < self.dt <= self.T:
            raise ValueError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        if not 0 <= self.max_retries <= 8:
            raise ValueError(f"max_retries must be in [0, 8], got {self.max_retries}")
        if self.fold_action not in ("halt", "retry-half-dt"):
            raise ValueError(f"unknown fold_action {self.fold_action!r}")


@dataclass(frozen=True)
class HistoryRecord:
    t: float
    min_jacobian: float
    volume: float
    equidistribution_residual: float
    cg_iterations: int
    constraint_residual: float  # |integral(1/f) - |Omega_0|| / |Omega_0|
    cg_relative_residual: float = 0.0


HISTORY_COLUMNS = ("t", "min_jacobian", "volume", "equidistribution_residual", "cg_iterations")


@dataclass(eq=False)
class DeformState:
    t: float
    mesh: Mesh
    initial_coords: np.ndarray
    monitor: Monitor
    motion: NodeMotion
    dt: float
    history: list = field(default_factory=list)


def _record(state: DeformState, cg_iterations: int = 0, cg_rel: float = 0.0) -> HistoryRecord:
    m, mon = state.mesh, state.monitor
    k = volume_factor(mon, m, state.t)
    integral = constraint_integral(mon, m, state.t, k)
    return HistoryRecord(
        t=state.t,
        min_jacobian=float(element_min_jacobians(m).min()),
        volume=total_volume(m),
        equidistribution_residual=equidistribution_residual(mon, m, state.initial_coords, k),
        cg_iterations=cg_iterations,
        constraint_residual=abs(integral - mon.volume0) / mon.volume0,
        cg_relative_residual=cg_rel,
    )


def advance(state: DeformState, dt: float, tol_cg: float = 1e-10):
    """One explicit Euler step without fold handling.

    Returns ``(new coordinates, velocity field)``. Node ``i`` moves by
    ``dt * f(x_i, t) * u_i``; prescribed components carry ``u = v / f`` so the
    boundary moves exactly by ``dt * v``.
    """
    m, mon, t = state.mesh, state.monitor, state.t
    g = eval_g(mon, m, t, state.motion.velocity)
    f = eval_f(mon, m.node_coords, t, g.scale)
    c = ConstraintSet.from_arrays(state.motion.velocity / f[:, None], state.motion.prescribed, state.motion.slip)
    u = solve_velocity(m, g, c, tol=tol_cg)
    return m.node_coords + dt * f[:, None] * u.values, u


def step(state: DeformState, dt: float, cfg: RunConfig | None = None) -> DeformState:
    """Advance by ``dt``; on a fold either halt or retry with halved steps."""
    cfg = cfg or RunConfig(dt=dt)
    if state.t + dt > cfg.T + T_EPS:
        raise ValueError(f"step to t={state.t + dt} overshoots T={cfg.T}")
    h = dt
    retries = 0
    while True:
        coords, u = advance(state, h, cfg.tol_cg)
        new_mesh = state.mesh.with_coords(coords)
        mins = element_min_jacobians(new_mesh)
        if mins.min() > 0:
            break
        bad = int(np.argmin(mins))
        if cfg.fold_action == "halt" or retries >= cfg.max_retries:
            raise FoldError(state.t + h, bad, float(mins[bad]))
        retries += 1
        h *= 0.5
        log.warning("fold at t=%.6g (element %d); retrying with dt=%.3g", state.t + 2 * h, bad, h)
    t_new = state.t + h
    if abs(cfg.T - t_new) <= T_EPS:
        t_new = cfg.T
    new = replace(state, t=t_new, mesh=new_mesh, history=list(state.history))
    if cfg.record_history:
        new.history.append(_record(new, u.report.iterations, u.report.relative_residual))
    return new


def initial_state(mesh0: Mesh, monitor, motion, dt: float = 0.05) -> DeformState:
    if isinstance(monitor, MonitorSpec):
        monitor = normalize_target(monitor, mesh0)
    if isinstance(motion, BoundaryMotion):
        motion = node_motion(mesh0, motion)
    elif motion is None:
        motion = NodeMotion.stationary(mesh0)
    return DeformState(0.0, mesh0, mesh0.node_coords.copy(), monitor, motion, dt)


def run_algorithm1(mesh0: Mesh, monitor, motion, cfg: RunConfig | None = None,
                   callback=None) -> tuple[Mesh, list[HistoryRecord]]:
    """March from t=0 to ``cfg.T``.

    ``monitor`` may be a :class:`MonitorSpec` (normalized against ``mesh0``)
    or an already normalized :class:`Monitor`; ``motion`` a
    :class:`BoundaryMotion`, a :class:`NodeMotion` or ``None``. The history
    starts with the t=0 record.
    """
    cfg = cfg or RunConfig()
    if element_min_jacobians(mesh0).min() <= 0:
        raise FoldedMeshError("initial mesh is folded")
    state = initial_state(mesh0, monitor, motion, cfg.dt)
    if cfg.record_history:
        state.history.append(_record(state))
    if callback is not None:
        callback(state)
    while cfg.T - state.t > T_EPS:
        # next point on the dt grid; sizes t_(k+1) - t_k telescope to exactly T
        k = int(np.floor(state.t / cfg.dt + 1e-9))
        t_next = min((k + 1) * cfg.dt, cfg.T)
        if cfg.T - t_next <= T_EPS:
            t_next = cfg.T
        state = step(state, t_next - state.t, cfg)
        if callback is not None:
            callback(state)
        if state.history:
            log.debug("t=%.4f min J=%.4g", state.t, state.history[-1].min_jacobian)
    return state.mesh, state.history


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for rec in history:
            w.writerow([repr(float(rec.t)), repr(float(rec.min_jacobian)), repr(float(rec.volume)),
                        repr(float(rec.equidistribution_residual)), rec.cg_iterations])
