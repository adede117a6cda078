import sys
import time

import numpy as np

from dfnflow import bench, post

case = bench.make_analytic_case()


class Exact:
    head = staticmethod(bench._analytic_head)
    grad = staticmethod(bench._analytic_grad)


exact = Exact()
deltas = [0.25 / 2 ** k for k in range(4)]
for jit in (float(a) for a in sys.argv[1:]):
    for seed in (1,):
        l2 = []
        t0 = time.perf_counter()
        for d in deltas:
            sol, nm = bench.run_method(case.network, "tpfa", d,
                                       source=bench._analytic_source,
                                       jitter=jit, seed=seed)
            l2.append(post.error_norms(sol, exact).l2_head)
        dec = [100.0 * (l2[k] - l2[k + 1]) / l2[k] for k in range(3)]
        print(f"jit={jit:.2f} seed={seed} l2={[f'{e:.3e}' for e in l2]} "
              f"dec%={[f'{x:.1f}' for x in dec]}  {time.perf_counter()-t0:.0f}s",
              flush=True)
