import sys
import time

import numpy as np

from dfnflow import bench, post

methods = ["tpfa", "mpfa", "fem", "fem-mortar", "mvem0", "mvem0-coarse",
           "opt-fem"]


def outflow(case, m, delta=None, cells=None, jitter=0.0, seed=0):
    net = case.network
    overrides = None
    if cells is not None:
        delta, overrides = bench.cells_to_h(net, cells)
    sol, nm = bench.run_method(net, m, delta, h_overrides=overrides,
                               jitter=jitter, seed=seed)
    flux = post.boundary_flux(sol, portions=set(case.outflow_portions))
    n = sum(fm.ncells for fm in nm.fracture_meshes)
    return sum(flux.values()), n


which = sys.argv[1]

if which == "angle":
    for theta in (np.pi / 2, np.pi / 8, np.pi / 565):
        case = bench.make_angle_case(theta)
        for d in (0.1, 0.05):
            t0 = time.perf_counter()
            vals = {}
            ns = {}
            for m in methods:
                vals[m], ns[m] = outflow(case, m, delta=d)
            ref = vals["mvem0"]
            dev = {m: 100 * abs(v - ref) / abs(ref) for m, v in vals.items()}
            worst = max(dev, key=dev.get)
            print(f"theta={theta:.5f} d={d}: ref={ref:.5f} "
                  f"worst={worst}:{dev[worst]:.2f}% "
                  f"n_match={ns['fem']} n_nonmatch={ns['opt-fem']} "
                  f"({time.perf_counter()-t0:.0f}s)", flush=True)

elif which == "sliding":
    for cid in (1, 10, 21):
        case = bench.make_sliding_case(cid)
        t0 = time.perf_counter()
        vals = {m: outflow(case, m, cells=1100)[0] for m in methods}
        ref = vals["mvem0"]
        dev = {m: 100 * abs(v - ref) / abs(ref) for m, v in vals.items()}
        worst = max(dev, key=dev.get)
        tr = case.network.trace(case.network.t(1, 2))
        print(f"id={cid} len={tr.length:.3f}: ref={ref:.5f} "
              f"worst={worst}:{dev[worst]:.2f}% "
              f"({time.perf_counter()-t0:.0f}s)", flush=True)

elif which == "shrinking":
    for cid in (1, 4, 5, 20, 44):
        case = bench.make_shrinking_case(cid)
        t0 = time.perf_counter()
        vals = {m: outflow(case, m, cells=500)[0] for m in methods}
        ref = vals["mvem0"]
        dev = {m: 100 * abs(v - ref) / abs(ref) for m, v in vals.items()}
        worst = max(dev, key=dev.get)
        print(f"id={cid}: ref={ref:.5f} worst={worst}:{dev[worst]:.2f}% "
              f"({time.perf_counter()-t0:.0f}s)", flush=True)
