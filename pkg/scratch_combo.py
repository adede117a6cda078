import sys
import time

from dfnflow import bench, post

case = bench.make_analytic_case()


class Exact:
    head = staticmethod(bench._analytic_head)
    grad = staticmethod(bench._analytic_grad)


exact = Exact()
deltas = [0.25 / 2 ** k for k in range(4)]
jit = float(sys.argv[1])
t0 = time.perf_counter()
l2t, l2m = [], []
for d in deltas:
    sol, _ = bench.run_method(case.network, "tpfa", d,
                              source=bench._analytic_source, jitter=jit, seed=1)
    l2t.append(post.error_norms(sol, exact).l2_head)
    sol, _ = bench.run_method(case.network, "mvem0", d,
                              source=bench._analytic_source, jitter=jit, seed=1)
    l2m.append(post.error_norms(sol, exact, target="cell-mean").l2_head)
dec = [100.0 * (l2t[k] - l2t[k + 1]) / l2t[k] for k in range(3)]
print(f"jit={jit} tpfa_dec%={[f'{x:.1f}' for x in dec]} "
      f"mvem_slope={post.fit_slope(l2m, deltas):.2f}  "
      f"{time.perf_counter()-t0:.0f}s")
