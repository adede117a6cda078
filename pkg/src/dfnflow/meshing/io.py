"""Mesh file formats.

MSH 2.2 ASCII in and out (physical surface tag = fracture id, physical
line tags 1000+k for trace k and 2000+p for boundary portion p), VTK
legacy ASCII out for visualization, and a deterministic JSON dump of a
NetworkMesh for test fixtures and pipeline artifacts.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import MeshFailure, ParseError, UnsupportedVersion
from ..geometry import network_from_dict, network_to_dict
from .core import (
    EDGE_BOUNDARY,
    EDGE_TRACE,
    NetworkMesh,
    build_fracture_mesh,
)

MESH_FORMAT = "dfnflow-mesh"
MESH_VERSION = 1

TRACE_TAG_BASE = 1000
PORTION_TAG_BASE = 2000


# -- MSH 2.2 -------------------------------------------------------------


def _msh_sections(lines):
    """Yield (name, first line number, list of lines) per $-section."""
    n = 0
    while n < len(lines):
        s = lines[n].strip()
        if not s:
            n += 1
            continue
        if not s.startswith("$"):
            raise ParseError(f"line {n + 1}: expected a section marker, got {s!r}")
        name = s[1:]
        body = []
        n += 1
        start = n
        while n < len(lines) and lines[n].strip() != f"$End{name}":
            body.append(lines[n])
            n += 1
        if n >= len(lines):
            raise ParseError(f"line {start}: unterminated section ${name}")
        n += 1
        yield name, start + 1, body


def import_gmsh(path, net, conformity="matching"):
    """Read an MSH 2.2 ASCII file into a NetworkMesh.

    Surface elements (triangles, quads) carry the fracture id as their
    physical tag; line elements are ignored for construction (edge
    classification is geometric) but their tags are sanity-checked.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    nodes = {}
    cells_by_frac = {}
    saw_format = False
    for name, lno, body in _msh_sections(lines):
        if name == "MeshFormat":
            parts = body[0].split()
            if parts[0] != "2.2":
                raise UnsupportedVersion(
                    f"MSH version {parts[0]} not supported (need 2.2)"
                )
            if parts[1] != "0":
                raise UnsupportedVersion("binary MSH not supported")
            saw_format = True
        elif name == "Nodes":
            try:
                count = int(body[0])
            except (ValueError, IndexError):
                raise ParseError(f"line {lno}: bad node count")
            for off, ln in enumerate(body[1:count + 1]):
                parts = ln.split()
                try:
                    nodes[int(parts[0])] = np.array(
                        [float(parts[1]), float(parts[2]), float(parts[3])]
                    )
                except (ValueError, IndexError):
                    raise ParseError(f"line {lno + 1 + off}: bad node record")
            if len(nodes) != count:
                raise ParseError(f"line {lno}: node count mismatch")
        elif name == "Elements":
            try:
                count = int(body[0])
            except (ValueError, IndexError):
                raise ParseError(f"line {lno}: bad element count")
            for off, ln in enumerate(body[1:count + 1]):
                parts = ln.split()
                try:
                    etype = int(parts[1])
                    ntags = int(parts[2])
                    phys = int(parts[3]) if ntags >= 1 else 0
                    conn = [int(p) for p in parts[3 + ntags:]]
                except (ValueError, IndexError):
                    raise ParseError(f"line {lno + 1 + off}: bad element record")
                if etype == 2 or etype == 3:
                    want = 3 if etype == 2 else 4
                    if len(conn) != want:
                        raise ParseError(
                            f"line {lno + 1 + off}: element needs {want} nodes"
                        )
                    cells_by_frac.setdefault(phys, []).append(conn)
                # line elements (etype 1) and points are skipped
        # other sections (PhysicalNames etc.) are skipped
    if not saw_format:
        raise ParseError("missing $MeshFormat section")
    if not cells_by_frac:
        raise ParseError("no surface elements found")

    fmeshes = []
    for frac in net.fractures:
        conns = cells_by_frac.get(frac.id)
        if not conns:
            raise ParseError(
                f"no surface elements tagged with fracture id {frac.id}"
            )
        used = sorted({i for conn in conns for i in conn})
        for i in used:
            if i not in nodes:
                raise ParseError(f"element references unknown node {i}")
        remap = {i: k for k, i in enumerate(used)}
        pts3 = np.array([nodes[i] for i in used])
        pts2 = frac.to_local(pts3)
        cells = []
        for conn in conns:
            loop = np.array([remap[i] for i in conn], dtype=np.int64)
            p = pts2[loop]
            x, y = p[:, 0], p[:, 1]
            a = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
            cells.append(loop if a > 0 else loop[::-1].copy())
        fmeshes.append(build_fracture_mesh(net, frac.id, pts2, cells, conformity))
    mesh = NetworkMesh(net, fmeshes, conformity)
    mesh.validate()
    return mesh


def export_gmsh(nm, path):
    """Write an MSH 2.2 ASCII file (triangles and quads only).

    Surface elements are tagged with their fracture id; trace edges and
    boundary edges are written as line elements tagged 1000+trace id and
    2000+portion index.
    """
    node_lines = []
    elem_lines = []
    offset = 0
    eid = 0
    for fm in nm.fracture_meshes:
        fid = fm.fracture.id
        pts3 = fm.fracture.to_global(fm.points)
        for p in pts3:
            node_lines.append(
                f"{len(node_lines) + 1} "
                f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}"
            )
        for loop in fm.cells:
            if len(loop) == 3:
                etype = 2
            elif len(loop) == 4:
                etype = 3
            else:
                raise MeshFailure(
                    "MSH 2.2 cannot represent polygons with more than 4 "
                    "vertices; use the JSON dump or VTK output"
                )
            eid += 1
            conn = " ".join(str(offset + i + 1) for i in loop)
            elem_lines.append(f"{eid} {etype} 2 {fid} {fid} {conn}")
        for e in range(fm.nedges):
            kind = fm.edge_kind[e]
            if kind == EDGE_TRACE:
                tag = TRACE_TAG_BASE + int(fm.edge_ref[e])
            elif kind == EDGE_BOUNDARY:
                tag = PORTION_TAG_BASE + int(fm.edge_ref[e])
            else:
                continue
            eid += 1
            a, b = fm.edge_verts[e]
            elem_lines.append(
                f"{eid} 1 2 {tag} {tag} {offset + a + 1} {offset + b + 1}"
            )
        offset += len(fm.points)
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        fh.write(f"$Nodes\n{len(node_lines)}\n")
        fh.write("\n".join(node_lines))
        fh.write(f"\n$EndNodes\n$Elements\n{len(elem_lines)}\n")
        fh.write("\n".join(elem_lines))
        fh.write("\n$EndElements\n")


# -- VTK legacy ----------------------------------------------------------

VTK_TRIANGLE = 5
VTK_POLYGON = 7
VTK_QUAD = 9


def export_vtk(nm, path, cell_data=None, title="dfnflow"):
    """Write the network mesh as a legacy ASCII VTK unstructured grid.

    ``cell_data`` maps field names to arrays over all cells in fracture
    order (concatenated), or to per-fracture lists of arrays.  A
    ``fracture`` id field is always included.
    """
    pts = []
    conn = []
    types = []
    frac_id = []
    offset = 0
    for fm in nm.fracture_meshes:
        pts3 = fm.fracture.to_global(fm.points)
        pts.extend(pts3)
        for loop in fm.cells:
            conn.append([offset + int(i) for i in loop])
            if len(loop) == 3:
                types.append(VTK_TRIANGLE)
            elif len(loop) == 4:
                types.append(VTK_QUAD)
            else:
                types.append(VTK_POLYGON)
            frac_id.append(fm.fracture.id)
        offset += len(fm.points)

    fields = {"fracture": np.asarray(frac_id, dtype=np.int64)}
    for name, data in (cell_data or {}).items():
        if isinstance(data, (list, tuple)) and not np.isscalar(data[0]):
            data = np.concatenate([np.asarray(d, float) for d in data])
        fields[name] = np.asarray(data)
        if len(fields[name]) != len(types):
            raise MeshFailure(
                f"cell data {name!r} has {len(fields[name])} values for "
                f"{len(types)} cells"
            )

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        for p in pts:
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        size = sum(len(c) + 1 for c in conn)
        fh.write(f"CELLS {len(conn)} {size}\n")
        for c in conn:
            fh.write(" ".join([str(len(c))] + [str(i) for i in c]) + "\n")
        fh.write(f"CELL_TYPES {len(types)}\n")
        for t in types:
            fh.write(f"{t}\n")
        fh.write(f"CELL_DATA {len(types)}\n")
        for name, data in fields.items():
            if np.issubdtype(data.dtype, np.integer):
                fh.write(f"SCALARS {name} int 1\nLOOKUP_TABLE default\n")
                for v in data:
                    fh.write(f"{int(v)}\n")
            else:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in data:
                    fh.write(f"{float(v)!r}\n")


# -- internal JSON dump --------------------------------------------------


def mesh_to_dict(nm):
    """JSON-ready dict of a NetworkMesh (deterministic layout)."""
    return {
        "format": MESH_FORMAT,
        "version": MESH_VERSION,
        "conformity": nm.conformity,
        "quality_violations": int(nm.quality_violations),
        "network": network_to_dict(nm.network),
        "fractures": [
            {
                "id": fm.fracture.id,
                "points": [[float(x), float(y)] for x, y in fm.points],
                "cells": [[int(i) for i in loop] for loop in fm.cells],
            }
            for fm in nm.fracture_meshes
        ],
    }


def mesh_from_dict(data):
    if not isinstance(data, dict) or data.get("format") != MESH_FORMAT:
        raise ParseError(
            f"not a mesh document: format={data.get('format')!r}"
            if isinstance(data, dict) else "mesh document must be a JSON object"
        )
    if data.get("version", 1) != MESH_VERSION:
        raise UnsupportedVersion(
            f"mesh version {data.get('version')} not supported"
        )
    net = network_from_dict(data["network"], require_dirichlet=False)
    conformity = data["conformity"]
    fmeshes = []
    for rec in data["fractures"]:
        pts = np.asarray(rec["points"], float)
        cells = [np.asarray(c, dtype=np.int64) for c in rec["cells"]]
        fmeshes.append(
            build_fracture_mesh(net, int(rec["id"]), pts, cells, conformity)
        )
    mesh = NetworkMesh(
        net, fmeshes, conformity, int(data.get("quality_violations", 0))
    )
    mesh.validate()
    return mesh


def dump_mesh(nm, path):
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(nm), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_mesh(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    return mesh_from_dict(data)
