"""Single-phase Darcy flow on discrete fracture networks.

Planar convex fractures exchange flux along their intersection traces.
The package covers geometry and trace computation, triangular and
polygonal meshing in three conformity classes, four families of
discretizations (two-point and multi-point finite volumes, P1 finite
elements with conforming or mortar trace coupling, lowest-order mixed
virtual elements, and a PDE-constrained optimization formulation),
error reporting against analytic solutions, and a benchmark harness.
"""

__version__ = "0.1.0"

from . import bench, errors
from .fem import fem_boundary_flux, solve_fem, solve_fem_mortar
from .fv import solve_mpfa, solve_tpfa
from .geometry import (
    BoundaryPortion,
    Fracture,
    FractureNetwork,
    Trace,
    compute_traces,
    dump_network,
    load_network,
    network_from_dict,
    network_to_dict,
)
from .meshing import (
    NetworkMesh,
    agglomerate,
    cut_to_polygons,
    restore_conformity,
    triangulate_network,
)
from .mvem import solve_mvem0
from .optfem import solve_optfem
from .post import (
    BenchReport,
    ErrorNorms,
    boundary_flux,
    error_norms,
    fit_slope,
    sample_line,
)
from .solution import Solution

__all__ = [
    "bench",
    "errors",
    "BenchReport",
    "BoundaryPortion",
    "ErrorNorms",
    "Fracture",
    "FractureNetwork",
    "NetworkMesh",
    "Solution",
    "Trace",
    "agglomerate",
    "boundary_flux",
    "compute_traces",
    "cut_to_polygons",
    "dump_network",
    "error_norms",
    "fem_boundary_flux",
    "fit_slope",
    "load_network",
    "network_from_dict",
    "network_to_dict",
    "restore_conformity",
    "sample_line",
    "solve_fem",
    "solve_fem_mortar",
    "solve_mpfa",
    "solve_mvem0",
    "solve_optfem",
    "solve_tpfa",
    "triangulate_network",
    "__version__",
]
