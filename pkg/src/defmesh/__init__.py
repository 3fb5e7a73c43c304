"""Deformation-based adaptive mesh generation with curved high-order output."""
from .deform import FoldError, RunConfig, run_algorithm1
from .geometry import BoundaryMotion, Ellipsoid, HalfSpace, Sphere, Target
from .hoe import HighOrderMesh, build_hoe, edge_deviation, export_msh, export_vtk, plot_svg
from .mesh import Marker, Mesh, box_grid, load_mesh, rect_grid, save_mesh, subdivide
from .monitor import InterfaceSource, MonitorSpec, UniformSource
from .refine import refine_and_conform

__version__ = "0.1.0"

__all__ = [
    "BoundaryMotion", "Ellipsoid", "FoldError", "HalfSpace", "HighOrderMesh", "InterfaceSource", "Marker",
    "Mesh", "MonitorSpec", "RunConfig", "Sphere", "Target", "UniformSource", "box_grid", "build_hoe",
    "edge_deviation", "export_msh", "export_vtk", "load_mesh", "plot_svg", "rect_grid", "refine_and_conform",
    "run_algorithm1", "save_mesh", "subdivide",
]
