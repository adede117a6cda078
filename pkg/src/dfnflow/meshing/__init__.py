from .core import (
    EDGE_BOUNDARY,
    EDGE_INTERIOR,
    EDGE_TRACE,
    FractureMesh,
    NetworkMesh,
    TraceSide,
    build_fracture_mesh,
)
from .io import (
    dump_mesh,
    export_gmsh,
    export_vtk,
    import_gmsh,
    load_mesh,
    mesh_from_dict,
    mesh_to_dict,
)
from .polygonal import agglomerate, cut_to_polygons, restore_conformity
from .triangulate import global_trace_partitions, triangulate_network

__all__ = [
    "EDGE_BOUNDARY",
    "EDGE_INTERIOR",
    "EDGE_TRACE",
    "FractureMesh",
    "NetworkMesh",
    "TraceSide",
    "agglomerate",
    "build_fracture_mesh",
    "cut_to_polygons",
    "dump_mesh",
    "export_gmsh",
    "export_vtk",
    "global_trace_partitions",
    "import_gmsh",
    "load_mesh",
    "mesh_from_dict",
    "mesh_to_dict",
    "restore_conformity",
    "triangulate_network",
]
