import numpy as np

from dfnflow import bench, post
from dfnflow.meshing import triangulate_network
from dfnflow.fem import solve_fem
from dfnflow.fv import solve_tpfa
from dfnflow.mvem import solve_mvem0

case = bench.make_analytic_case()


class Exact:
    head = staticmethod(bench._analytic_head)
    grad = staticmethod(bench._analytic_grad)


exact = Exact()

# 1. exact solution injected as discrete field -> norms ~ 0
nm = triangulate_network(case.network, 0.25, "matching")
node_head = []
for fm in nm.fracture_meshes:
    node_head.append(bench._analytic_head(fm.fracture.id,
                                          fm.fracture.to_global(fm.points)))
from dfnflow.solution import Solution
sol = Solution(mesh=nm, method="fem", node_head=node_head)
n = post.error_norms(sol, exact)
print("injected exact:", n.l2_head, n.h1_head)

# 2. constant field vs constant + eps
class Const:
    def head(self, fid, pts):
        return np.full(len(pts), 3.0 + 1e-3)
cell_head = [np.full(fm.ncells, 3.0) for fm in nm.fracture_meshes]
solc = Solution(mesh=nm, method="tpfa", cell_head=cell_head)
nc = post.error_norms(solc, Const())
area = sum(fm.cell_area.sum() for fm in nm.fracture_meshes)
print("const eps:", nc.l2_head, "expected", 1e-3 * np.sqrt(area))

# 3. FEM real norms at two levels
for d in (0.25, 0.125):
    nmk = triangulate_network(case.network, d, "matching")
    s = solve_fem(nmk, source=bench._analytic_source)
    e = post.error_norms(s, exact)
    print(f"fem d={d}: l2={e.l2_head:.4e} h1={e.h1_head:.4e}")

# 4. MVEM norms (head vs cell-mean, velocity vs exact)
for d in (0.25, 0.125):
    nmk = triangulate_network(case.network, d, "matching")
    s = solve_mvem0(nmk, source=bench._analytic_source)
    e = post.error_norms(s, exact, target="cell-mean", velocity_target="exact")
    print(f"mvem d={d}: l2={e.l2_head:.4e} u={e.l2_velocity:.4e}")

# 5. sample_line stair shape on a TPFA solution
nm2 = triangulate_network(case.network, 0.3, "matching")
st = solve_tpfa(nm2, source=bench._analytic_source)
s_arc, s_head = post.sample_line(st, (1, [-0.9, -0.9, 0.0], [0.9, 0.9, 0.0]), 60)
uniq = len(np.unique(np.round(s_head, 12)))
print("stair: n=60 unique:", uniq, "monotone arc:", np.all(np.diff(s_arc) > 0))

# 6. fit_slope trivials
ds = np.array([0.4, 0.2, 0.1, 0.05])
print("slope quad:", post.fit_slope(ds ** 2, ds))
print("slope const:", post.fit_slope(np.full(4, 0.37), ds))

# 7. boundary_flux dispatch on both kinds
bf_fem = post.boundary_flux(solve_fem(nm2, source=bench._analytic_source))
bf_tpfa = post.boundary_flux(st)
print("portions fem:", {k: round(v, 4) for k, v in sorted(bf_fem.items())})
print("portions tpfa:", {k: round(v, 4) for k, v in sorted(bf_tpfa.items())})

# 8. Monte-Carlo cross-check of error_norms on the TPFA solution
rng = np.random.default_rng(7)
tot = 0.0
for fm in nm2.fracture_meshes:
    fid = fm.fracture.id
    for c in range(fm.ncells):
        tri = fm.points[fm.cells[c]]
        r = rng.random((4000, 2))
        flip = r.sum(axis=1) > 1.0
        r[flip] = 1.0 - r[flip]
        pts = tri[0] + r[:, :1] * (tri[1] - tri[0]) + r[:, 1:] * (tri[2] - tri[0])
        he = bench._analytic_head(fid, fm.fracture.to_global(pts))
        hh = st.head_in_cell(fid, c, pts)
        tot += fm.cell_area[c] * np.mean((he - hh) ** 2)
mc = np.sqrt(tot)
qn = post.error_norms(st, exact).l2_head
print(f"MC {mc:.6e} vs quad {qn:.6e} rel {abs(mc - qn) / qn:.3%}")

# 9. BenchReport determinism
rep = post.BenchReport()
rep.add_run("a", "TPFA", 0.3, ncells=10, norms=post.ErrorNorms(1e-2),
            outflow=1.0, wall_time=0.5, line_sample=(s_arc[:3], s_head[:3]))
rep.add_run("a", "TPFA", 0.15, ncells=40, norms=post.ErrorNorms(2.5e-3))
rep.add_run("a", "TPFA", 0.075, ncells=160, norms=post.ErrorNorms(6.25e-4))
rep.fit_sweep_slopes()
rep.write("/tmp/rep1.csv")
rep.write_lines("/tmp/rep1_lines.csv")
rep.write_timings("/tmp/rep1_t.csv")
rep2 = post.BenchReport()
rep2.add_run("a", "TPFA", 0.3, ncells=10, norms=post.ErrorNorms(1e-2),
             outflow=1.0, wall_time=0.5, line_sample=(s_arc[:3], s_head[:3]))
rep2.add_run("a", "TPFA", 0.15, ncells=40, norms=post.ErrorNorms(2.5e-3))
rep2.add_run("a", "TPFA", 0.075, ncells=160, norms=post.ErrorNorms(6.25e-4))
rep2.fit_sweep_slopes()
rep2.write("/tmp/rep2.csv")
same = open("/tmp/rep1.csv", "rb").read() == open("/tmp/rep2.csv", "rb").read()
print("report deterministic:", same)
print(open("/tmp/rep1.csv").read().splitlines()[0:3])
