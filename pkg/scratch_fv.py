import numpy as np
from dfnflow.geometry import BoundaryPortion, Fracture, FractureNetwork
from dfnflow.meshing import build_fracture_mesh, NetworkMesh, triangulate_network
from dfnflow.fv import (
    assemble_tpfa, assemble_mpfa, solve_tpfa, solve_mpfa, fv_fluxes,
    cell_balance,
)

sq = Fracture(1, [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)])
net = FractureNetwork(
    [sq],
    boundary=[
        BoundaryPortion(1, 1, "dirichlet", 1.0),
        BoundaryPortion(1, 3, "dirichlet", 0.0),
    ],
)

# two-triangle mesh, exact TPFA linear solution
pts = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
cells = [[0, 1, 2], [0, 2, 3]]
fm = build_fracture_mesh(net, 1, pts, cells, "matching")
nm = NetworkMesh(net, [fm], "matching").validate()

sol = solve_tpfa(nm)
print("tpfa 2-cell heads:", sol.cell_head[0], "(want [2/3, 1/3])")
sys = sol.extras["system"]
flux, th = fv_fluxes(sys, np.concatenate(sol.cell_head))
# outflow through x=0 boundary edge
from dfnflow.meshing import EDGE_BOUNDARY
for e in range(fm.nedges):
    if fm.edge_kind[e] == EDGE_BOUNDARY:
        p = net.boundary[fm.edge_ref[e]]
        print("  edge", e, "portion", p.kind, p.value, "flux", flux[e
              if False else 0][e] if False else flux[0][e])
print("balance:", np.abs(cell_balance(sys, flux)).max())

# finer mesh, still linear: check h field error and outflow
nm2 = triangulate_network(net, 0.18, "matching")
sol2 = solve_tpfa(nm2)
fm2 = nm2.mesh_of(1)
hexact = fm2.cell_centroid[:, 0] + 0.5
print("tpfa linear-patch max err (unstructured):",
      np.abs(sol2.cell_head[0] - hexact).max())
sys2 = sol2.extras["system"]
fl2, _ = fv_fluxes(sys2, np.concatenate(sol2.cell_head))
out0 = 0.0
out1 = 0.0
for e in range(fm2.nedges):
    if fm2.edge_kind[e] == EDGE_BOUNDARY:
        p = net.boundary[fm2.edge_ref[e]]
        if p.kind == "dirichlet" and p.value == 0.0:
            out0 += fl2[0][e, 0]
        elif p.kind == "dirichlet":
            out1 += fl2[0][e, 0]
print("tpfa outflow x=0:", out0, " x=1:", out1)
print("tpfa balance:", np.abs(cell_balance(sys2, fl2)).max())

# MPFA patch test on the same unstructured mesh
sol3 = solve_mpfa(nm2)
print("mpfa linear-patch max err:", np.abs(sol3.cell_head[0] - hexact).max())
sys3 = sol3.extras["system"]
fl3, _ = fv_fluxes(sys3, np.concatenate(sol3.cell_head))
print("mpfa balance:", np.abs(cell_balance(sys3, fl3)).max())

# MPFA with anisotropic K and oblique linear solution, Dirichlet all around
K = np.array([[2.0, 0.7], [0.7, 1.0]])
sq2 = Fracture(1, [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], permeability=K)


def gfun(p):
    return 0.3 + 1.7 * p[0] - 0.9 * p[1]


net2 = FractureNetwork(
    [sq2],
    boundary=[BoundaryPortion(1, k, "dirichlet", gfun) for k in range(4)],
)
nm3 = triangulate_network(net2, 0.23, "matching")
sol4 = solve_mpfa(nm3)
fm3 = nm3.mesh_of(1)
cg = fm3.fracture.to_global(fm3.cell_centroid)
he = np.array([gfun(p) for p in cg])
print("mpfa oblique aniso patch err:", np.abs(sol4.cell_head[0] - he).max())
sol5 = solve_tpfa(nm3)
print("tpfa same problem err (expected nonzero):",
      np.abs(sol5.cell_head[0] - he).max())

# cross network: two fractures, junction star
f1 = Fracture(1, [(-1, 0, -1), (1, 0, -1), (1, 0, 1), (-1, 0, 1)])
f2 = Fracture(2, [(0, -1, -1), (0, 1, -1), (0, 1, 1), (0, -1, 1)])
netx = FractureNetwork(
    [f1, f2],
    boundary=[
        BoundaryPortion(1, 3, "dirichlet", 1.0),
        BoundaryPortion(2, 1, "dirichlet", 0.0),
    ],
)
nmx = triangulate_network(netx, 0.3, "matching")
solx = solve_tpfa(nmx)
sysx = solx.extras["system"]
flx, thx = fv_fluxes(sysx, np.concatenate(solx.cell_head))
print("cross tpfa balance:", np.abs(cell_balance(sysx, flx)).max())
print("trace heads:", {t: np.round(v, 4) for t, v in thx.items()})
solmx = solve_mpfa(nmx)
sysmx = solmx.extras["system"]
flmx, _ = fv_fluxes(sysmx, np.concatenate(solmx.cell_head))
print("cross mpfa balance:", np.abs(cell_balance(sysmx, flmx)).max())
print("cross head ranges tpfa",
      [(v.min().round(3), v.max().round(3)) for v in solx.cell_head],
      "mpfa",
      [(v.min().round(3), v.max().round(3)) for v in solmx.cell_head])
