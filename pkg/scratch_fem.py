import numpy as np
from dfnflow.geometry import BoundaryPortion, Fracture, FractureNetwork
from dfnflow.meshing import triangulate_network
from dfnflow.fem import solve_fem, solve_fem_mortar, fem_boundary_flux

sq = Fracture(1, [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)])
net = FractureNetwork(
    [sq],
    boundary=[
        BoundaryPortion(1, 1, "dirichlet", 1.0),
        BoundaryPortion(1, 3, "dirichlet", 0.0),
    ],
)
nm = triangulate_network(net, 0.2, "matching")
sol = solve_fem(nm)
fm = nm.mesh_of(1)
hx = fm.points[:, 0] + 0.5
print("fem linear patch err:", np.abs(sol.node_head[0] - hx).max())
fl = fem_boundary_flux(sol)
print("boundary fluxes:", {k: round(v, 12) for k, v in fl.items()},
      "portions:", [(p.edge, p.kind, p.value) for p in net.boundary])

# cross network: conforming vs mortar on the same matching mesh
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
solc = solve_fem(nmx)
solm = solve_fem_mortar(nmx)
for f in (0, 1):
    d = np.abs(solc.node_head[f] - solm.node_head[f]).max()
    print(f"fracture {f+1}: |conforming - mortar| = {d:.3e}")
print("mortar info:", solm.info)

sysm = solm.extras["system"]
Bh = sysm.B_full @ solm.extras["head"]
print("constraint residual:", np.abs(Bh).max())

# conforming-class mesh (different trace partitions per side)
nmc = triangulate_network(netx, 0.28, "conforming")
solm2 = solve_fem_mortar(nmc)
sys2 = solm2.extras["system"]
print("conforming-mesh constraint residual:",
      np.abs(sys2.B_full @ solm2.extras["head"]).max())
print("head ranges:", [(v.min().round(3), v.max().round(3))
                       for v in solm2.node_head])

# global balance: inflow + outflow = 0 (no source)
flx = fem_boundary_flux(solm2)
print("mortar boundary fluxes sum:", sum(flx.values()), flx)
flc = fem_boundary_flux(solc)
print("conforming boundary fluxes sum:", sum(flc.values()))

# quadratic manufactured solution on one fracture: h = x(1-x), f = 2
netq = FractureNetwork(
    [sq],
    boundary=[
        BoundaryPortion(1, 1, "dirichlet", 0.0),
        BoundaryPortion(1, 3, "dirichlet", 0.0),
        BoundaryPortion(1, 0, "neumann", 0.0),
        BoundaryPortion(1, 2, "neumann", 0.0),
    ],
)


def src(fid, pts):
    return np.full(len(pts), 2.0)


errs = []
for h in (0.2, 0.1, 0.05):
    nmq = triangulate_network(netq, h, "matching")
    sq_sol = solve_fem(nmq, source=src)
    fmq = nmq.mesh_of(1)
    x = fmq.points[:, 0] + 0.5
    errs.append(np.abs(sq_sol.node_head[0] - x * (1 - x)).max())
print("quadratic source nodal errors:", errs,
      "ratios:", [errs[i] / errs[i + 1] for i in range(2)])
