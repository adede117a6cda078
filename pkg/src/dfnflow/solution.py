"""Containers for discrete network solutions.

Every solver returns a :class:`Solution`.  Cell-centered methods fill
``cell_head`` (one array per fracture); nodal methods fill ``node_head``.
Evaluation helpers hide the representation so that post-processing and
reporting work uniformly across methods.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OffFracture
from .linalg import SolveInfo
from .meshing import NetworkMesh


@dataclass
class Solution:
    """Discrete head (and optionally flux) field on a network mesh.

    multipliers holds per-trace interval values whose meaning depends on
    the method: junction heads for the finite-volume solvers, Lagrange
    multipliers approximating the trace head for mvem0, and mortar
    multipliers (flux exchange densities) for the mortar solver.  Keys
    are trace ids, values arrays over the reference-side intervals.
    """

    mesh: NetworkMesh
    method: str
    cell_head: list | None = None
    node_head: list | None = None
    edge_flux: list | None = None
    cell_velocity: list | None = None
    multipliers: dict | None = None
    info: SolveInfo | None = None
    extras: dict = field(default_factory=dict)

    @property
    def kind(self):
        """"P0" for cell-centered heads, "P1" for nodal heads."""
        return "P0" if self.cell_head is not None else "P1"

    def head_in_cell(self, fid, cell, pts):
        """Evaluate the head inside one cell at local 2D points."""
        pts = np.atleast_2d(np.asarray(pts, float))
        if self.cell_head is not None:
            return np.full(len(pts), self.cell_head[fid - 1][cell])
        fm = self.mesh.mesh_of(fid)
        nodes = fm.cells[cell]
        if len(nodes) != 3:
            raise OffFracture("nodal heads require triangular cells")
        h = self.node_head[fid - 1][nodes]
        v = fm.points[nodes]
        lam = _barycentric(v, pts)
        return lam @ h

    def grad_in_cell(self, fid, cell):
        """Constant head gradient of a P1 field on one triangle."""
        if self.node_head is None:
            return np.zeros(2)
        fm = self.mesh.mesh_of(fid)
        nodes = fm.cells[cell]
        h = self.node_head[fid - 1][nodes]
        v = fm.points[nodes]
        g = np.linalg.solve(
            np.array([v[1] - v[0], v[2] - v[0]]), np.array([h[1] - h[0], h[2] - h[0]])
        )
        return g


def _barycentric(v, pts):
    """Barycentric coordinates of pts in triangle v (3 x 2)."""
    T = np.array([v[1] - v[0], v[2] - v[0]]).T
    ab = np.linalg.solve(T, (pts - v[0]).T).T
    return np.column_stack([1.0 - ab[:, 0] - ab[:, 1], ab])


def nodal_p0_means(sol):
    """Cell averages of a nodal solution (vertex mean per triangle)."""
    out = []
    for fm, h in zip(sol.mesh.fracture_meshes, sol.node_head):
        out.append(np.array([h[c].mean() for c in fm.cells]))
    return out
