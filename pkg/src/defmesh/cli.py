"""Command line entry point.

Exit status: 0 on success, 1 for configuration or input errors, 2 for
numerical failures (folded meshes, solver breakdown). Set ``DEFMESH_LOG``
to a logging level name (``INFO``, ``DEBUG``) for progress output.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import hoe as hoe_mod
from .config import ConfigError, PipelineConfig, load_config, parse_config, parse_shape
from .deform import FoldError, write_history_csv
from .geometry import ProjectionError
from .lsfem import FoldedMeshError, SolverError
from .mesh import MeshFormatError, element_min_jacobians, load_mesh, save_mesh, total_volume
from .monitor import MonitorError
from .pipeline import PipelineResult, generate, high_order, jacobian_ratio, refine

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

log = logging.getLogger("defmesh")


def _configure_logging() -> None:
    level = os.environ.get("DEFMESH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _with_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    data = cfg.effective()
    if args.dt is not None:
        data["run"]["dt"] = args.dt
    if args.order is not None:
        data["order"] = args.order
    if args.output_dir is not None:
        data["output"]["dir"] = args.output_dir
    # image paths were already made absolute by load_config
    return parse_config(data)


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_outputs(res: PipelineResult, stage: str) -> Path:
    cfg = res.config
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    req = set(cfg.output.requests)
    _dump_json(cfg.effective(), out / "effective_config.json")
    if "mesh" in req:
        save_mesh(res.coarse, out / "coarse.json")
    if "history" in req:
        write_history_csv(res.history, out / "history.csv")
        if res.refine_history:
            write_history_csv(res.refine_history, out / "refine_history.csv")
    if "refined" in req and res.refined is not None:
        save_mesh(res.refined, out / "refined.json")
    if "svg" in req:
        hoe_mod.plot_svg(res.coarse, out / "coarse.svg", fill_values=jacobian_ratio(res.coarse, res.initial))
        if res.refined is not None:
            hoe_mod.plot_svg(res.refined, out / "refined.svg",
                             fill_values=jacobian_ratio(res.refined, res.subdivision.fine_mesh))
        if res.hoe is not None:
            hoe_mod.plot_svg(res.hoe, out / "hoe.svg")
    final = res.hoe if stage == "hoe" else (res.refined if stage == "refine" else res.coarse)
    if "msh" in req:
        hoe_mod.export_msh(final, out / f"{stage}.msh")
    if "vtk" in req:
        hoe_mod.export_vtk(final, out / f"{stage}.vtk")
    _dump_json(res.summary(), out / "summary.json")
    return out


def _print_summary(summary: dict) -> None:
    for key, val in summary.items():
        if isinstance(val, dict):
            for name, d in val.items():
                print(f"{key}[{name}]: " + ", ".join(f"{k}={v:.6g}" for k, v in d.items()))
        elif isinstance(val, float):
            print(f"{key}: {val:.6g}")
        else:
            print(f"{key}: {val}")


def _run_stage(args, stage: str) -> int:
    cfg = _with_overrides(load_config(args.config), args)
    runner = {"generate": generate, "refine": refine, "hoe": high_order}[stage]
    res = runner(cfg)
    out = _write_outputs(res, stage)
    _print_summary(res.summary())
    print(f"outputs: {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    m = load_mesh(args.mesh)
    mins = element_min_jacobians(m)
    maxs = m.jacobians(np.array([[0.5] * m.dim]))[:, 0]
    print(f"nodes: {m.n_nodes}  elements: {m.n_elements}")
    print(f"min_jacobian: {mins.min():.6g} (element {int(np.argmin(mins))})")
    print(f"max_jacobian: {max(maxs.max(), mins.max()):.6g}")
    print(f"volume: {total_volume(m):.12g}")
    if args.shape:
        shape = parse_shape(args.shape)
        # the shape describes the curved boundary; walls are measured only if nothing moves
        marks = [mk for mk in m.markers if mk.kind == "moving"] or list(m.markers)
        for mk in marks:
            nodes = m.nodes_with_marker(mk.name)
            if nodes.size:
                dev = float(np.max(shape.distance(m.node_coords[nodes])))
                print(f"deviation[{mk.name}]: {dev:.3e}")
    if mins.min() <= 0:
        bad = np.flatnonzero(mins <= 0)
        print(f"folded: {bad.size} element(s) with non-positive Jacobian, first {bad[:10].tolist()}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_export(args) -> int:
    m = load_mesh(args.mesh)
    writer = {"msh": hoe_mod.export_msh, "vtk": hoe_mod.export_vtk, "svg": hoe_mod.plot_svg}[args.format]
    writer(m, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="defmesh", description="Deformation-based mesh generation.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("generate", "morph the initial grid"),
                       ("refine", "morph, subdivide and conform the boundary"),
                       ("hoe", "morph, refine and build order-p elements")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config", help="scenario file (TOML or JSON)")
        s.add_argument("--dt", type=float, help="override run.dt")
        s.add_argument("--order", type=int, help="override the element order p")
        s.add_argument("--output-dir", "--seed-output-dir", dest="output_dir", help="override output.dir")
        s.set_defaults(func=lambda a, stage=name: _run_stage(a, stage))
    c = sub.add_parser("check", help="report Jacobians, volume and boundary deviation of a mesh")
    c.add_argument("mesh")
    c.add_argument("--shape", help="inline JSON or a TOML/JSON file describing the target shape")
    c.set_defaults(func=cmd_check)
    e = sub.add_parser("export", help="convert a mesh JSON file")
    e.add_argument("mesh")
    e.add_argument("--format", required=True, choices=("msh", "vtk", "svg"))
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MeshFormatError, MonitorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FoldError as exc:
        print(f"error: {exc} (t={exc.t:.6g}, element {exc.element})", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FoldedMeshError, SolverError, ProjectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # remaining ValueErrors come from inconsistent inputs (e.g. conflicting corner markers)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
