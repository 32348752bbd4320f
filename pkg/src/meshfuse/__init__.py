"""Direct mesh reconstruction from a single inverse-depth map.

A 2D Delaunay mesh (tracked landmarks plus a regular grid of Steiner points)
is laid over the image, and the inverse depth and plane-slope of every vertex
are fitted by minimizing

    sum_edges ||D_e x||_1 + lambda * (sum_pixels |a_d xi - b_d| + sum_landmarks |xi_v - z_v|)

with a first-order primal-dual method.
"""

from .barycentric import DepthGrid, SparseInterpolator, build_interpolator, locate, render
from .errors import (
    DegenerateError,
    DivergenceError,
    FormatError,
    MeshFuseError,
    SolverError,
    UncoveredPixelError,
)
from .metrics import accurate_density
from .mesh2d import Edge, Landmark, Mesh2D, VertexState, edge_weights, triangulate
from .nltgv import apply_D, apply_D_adjoint, apply_De, nltgv_energy
from .pdsolver import (
    DualState,
    SolveResult,
    SolverConfig,
    energy,
    ls_fit,
    solve,
)
from .report import EvalReport

__version__ = "0.1.0"

__all__ = [
    "DegenerateError",
    "DepthGrid",
    "DivergenceError",
    "DualState",
    "Edge",
    "EvalReport",
    "FormatError",
    "Landmark",
    "Mesh2D",
    "MeshFuseError",
    "SolveResult",
    "SolverConfig",
    "SolverError",
    "SparseInterpolator",
    "UncoveredPixelError",
    "VertexState",
    "accurate_density",
    "apply_D",
    "apply_D_adjoint",
    "apply_De",
    "build_interpolator",
    "edge_weights",
    "energy",
    "locate",
    "ls_fit",
    "nltgv_energy",
    "render",
    "solve",
    "triangulate",
]
