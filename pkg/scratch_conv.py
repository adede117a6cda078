import time

import numpy as np

from dfnflow import bench, post

case = bench.make_analytic_case()


class Exact:
    head = staticmethod(bench._analytic_head)
    grad = staticmethod(bench._analytic_grad)


exact = Exact()
deltas = [0.25 / 2 ** k for k in range(4)]
methods = ["tpfa", "mpfa", "fem", "fem-mortar", "mvem0", "mvem0-coarse",
           "opt-fem"]
t_all = time.perf_counter()
res = {}
for m in methods:
    rows = []
    for d in deltas:
        t0 = time.perf_counter()
        sol, nm = bench.run_method(case.network, m, d,
                                   source=bench._analytic_source,
                                   jitter=0.55, seed=1)
        if m.startswith("mvem0"):
            e = post.error_norms(sol, exact, target="cell-mean",
                                 velocity_target="exact")
        else:
            e = post.error_norms(sol, exact)
        dt = time.perf_counter() - t0
        nc = sum(fm.ncells for fm in nm.fracture_meshes)
        rows.append((d, nc, e, dt))
        h1 = f"{e.h1_head:.3e}" if e.h1_head is not None else "-"
        u = f"{e.l2_velocity:.3e}" if e.l2_velocity is not None else "-"
        print(f"{m:12s} d={d:.5f} n={nc:6d} l2={e.l2_head:.3e} "
              f"h1={h1} u={u}  {dt:5.1f}s", flush=True)
    res[m] = rows

print(f"\ntotal {time.perf_counter() - t_all:.1f}s\n")
for m, rows in res.items():
    ds = [r[0] for r in rows]
    l2 = [r[2].l2_head for r in rows]
    line = f"{m:12s} l2_slope={post.fit_slope(l2, ds):5.2f}"
    if rows[0][2].h1_head is not None:
        line += f" h1_slope={post.fit_slope([r[2].h1_head for r in rows], ds):5.2f}"
    if rows[0][2].l2_velocity is not None:
        line += f" u_slope={post.fit_slope([r[2].l2_velocity for r in rows], ds):5.2f}"
    dec = 100.0 * (l2[-2] - l2[-1]) / l2[-2]
    mono = all(l2[k + 1] < l2[k] for k in range(len(l2) - 1))
    line += f" final_dec={dec:5.1f}% monotone={mono}"
    print(line)
