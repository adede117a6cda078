import numpy as np
from dfnflow.geometry import BoundaryPortion, Fracture, FractureNetwork
from dfnflow.meshing import (
    agglomerate, cut_to_polygons, restore_conformity, triangulate_network,
)
from dfnflow.mvem import solve_mvem0
from dfnflow.fem import solve_fem

sq = Fracture(1, [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)])
net = FractureNetwork(
    [sq],
    boundary=[
        BoundaryPortion(1, 1, "dirichlet", 1.0),
        BoundaryPortion(1, 3, "dirichlet", 0.0),
    ],
)
nm = triangulate_network(net, 0.2, "matching")
sol = solve_mvem0(nm)
fm = nm.mesh_of(1)
hx = fm.cell_centroid[:, 0] + 0.5
print("mvem linear patch head err:", np.abs(sol.cell_head[0] - hx).max())
print("velocity err:", np.abs(sol.cell_velocity[0] - [-1.0, 0.0]).max())
print("info:", sol.info)

# cross network, mvem vs fem
f1 = Fracture(1, [(-1, 0, -1), (1, 0, -1), (1, 0, 1), (-1, 0, 1)])
f2 = Fracture(2, [(0, -1, -1), (0, 1, -1), (0, 1, 1), (0, -1, 1)])
netx = FractureNetwork(
    [f1, f2],
    boundary=[
        BoundaryPortion(1, 3, "dirichlet", 1.0),
        BoundaryPortion(2, 1, "dirichlet", 0.0),
    ],
)
nmx = triangulate_network(netx, 0.28, "matching")
solx = solve_mvem0(nmx)
print("cross multipliers:", {t: np.round(v, 3) for t, v in solx.multipliers.items()})
sysx = solx.extras["system"]
u = solx.extras["flux_dofs"]
print("div residual:", np.abs(sysx.G @ u - sysx.F).max())
print("trace balance:", np.abs(sysx.C @ u).max())
solfem = solve_fem(nmx)
# compare cell means
from dfnflow.solution import nodal_p0_means
pm = nodal_p0_means(solfem)
for f in (0, 1):
    print(f"frac {f+1} mvem vs fem cell-mean diff:",
          np.abs(solx.cell_head[f] - pm[f]).max())

# all-linear compatible field h = y(global) on a nonmatching cut+restored mesh
def gy(p):
    return p[1]

bcs = []
for fid, frac in ((1, f1), (2, f2)):
    for e in range(4):
        bcs.append(BoundaryPortion(fid, e, "dirichlet", gy))
nety = FractureNetwork([f1, f2], boundary=bcs)
nmy = triangulate_network(nety, 0.33, "nonmatching")
cut = cut_to_polygons(nmy)
rest = restore_conformity(cut)
soly = solve_mvem0(rest)
err = 0.0
for f in (0, 1):
    fmx = rest.mesh_of(f + 1)
    cg = fmx.fracture.to_global(fmx.cell_centroid)
    err = max(err, np.abs(soly.cell_head[f] - cg[:, 1]).max())
print("polygonal (cut+restored) linear patch err:", err)

agg = agglomerate(rest, 0.5 * np.mean(rest.mesh_of(1).cell_area))
sola = solve_mvem0(agg)
erra = 0.0
for f in (0, 1):
    fmx = agg.mesh_of(f + 1)
    cg = fmx.fracture.to_global(fmx.cell_centroid)
    erra = max(erra, np.abs(sola.cell_head[f] - cg[:, 1]).max())
print("agglomerated linear patch err:", erra,
      "cells:", [agg.mesh_of(1).ncells, agg.mesh_of(2).ncells],
      "was:", [rest.mesh_of(1).ncells, rest.mesh_of(2).ncells])
