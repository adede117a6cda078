import numpy as np
from dfnflow.geometry import BoundaryPortion, Fracture, FractureNetwork
from dfnflow.meshing import triangulate_network
from dfnflow.fem import solve_fem, fem_boundary_flux
from dfnflow.optfem import OptSystem, solve_optfem

# 1. single fracture: degenerates to plain FEM
sq = Fracture(1, [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)])
net = FractureNetwork(
    [sq],
    boundary=[
        BoundaryPortion(1, 1, "dirichlet", 1.0),
        BoundaryPortion(1, 3, "dirichlet", 0.0),
    ],
)
nm = triangulate_network(net, 0.25, "matching")
so = solve_optfem(nm)
sf = solve_fem(nm)
print("single fracture opt vs fem:",
      np.abs(so.node_head[0] - sf.node_head[0]).max(), "J:", so.extras["cost"])

# 2. cross network, matching: compare with conforming FEM
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
sox = solve_optfem(nmx)
sfx = solve_fem(nmx)
print("cross opt iters:", sox.info.iterations, "J:", sox.extras["cost"],
      "grad:", sox.extras["grad_norm"])
for f in (0, 1):
    print(f"  frac {f+1} |opt - fem|max:",
          np.abs(sox.node_head[f] - sfx.node_head[f]).max())
print("  fluxes:", fem_boundary_flux(sox))

# 3. nonmatching
nmn = triangulate_network(netx, 0.3, "nonmatching")
son = solve_optfem(nmn)
print("nonmatching opt iters:", son.info.iterations, "J:", son.extras["cost"])
print("  fluxes:", fem_boundary_flux(son))

# 4. adjoint gradient vs finite differences
sysn = OptSystem(nmn)
rng = np.random.default_rng(7)
U0 = rng.normal(size=sysn.dim) * 0.1
J0, g0 = sysn.cost_and_gradient(U0)
d = rng.normal(size=sysn.dim)
d /= np.linalg.norm(d)
eps = 1e-6
Jp = sysn.cost_and_gradient(U0 + eps * d)[0]
Jm = sysn.cost_and_gradient(U0 - eps * d)[0]
fd = (Jp - Jm) / (2 * eps)
an = g0 @ d
print("gradient check: fd", fd, "adjoint", an, "rel",
      abs(fd - an) / max(abs(fd), 1e-30))

# 5. pure-Neumann fracture 2 (only trace pins it)
netp = FractureNetwork(
    [f1, f2],
    boundary=[
        BoundaryPortion(1, 1, "dirichlet", 0.0),
        BoundaryPortion(1, 3, "dirichlet", 1.0),
    ],
)
nmp = triangulate_network(netp, 0.3, "nonmatching")
sop = solve_optfem(nmp)
print("pure-neumann partner: iters", sop.info.iterations,
      "J", sop.extras["cost"], "const", sop.extras["free_constants"])
print("  f2 head range:", sop.node_head[1].min(), sop.node_head[1].max())
