"""
Approximate forward stepwise over all log ratios without building them.

Each step pairs the feature most positively correlated with the residual
with the most negatively correlated one, so the cost grows linearly in p.
Exact stepwise over the expanded ratio matrix grows with p squared.
"""
import time

import numpy as np

from lrlasso import approx_forward_stepwise, exact_forward_stepwise, expand_ratios
from lrlasso.simulate import gen_experiment1

for p in (50, 100, 200, 400):
    d, _ = gen_experiment1(500, p, 1.0, seed=p)
    L = np.log(d.X)
    t0 = time.perf_counter()
    approx = approx_forward_stepwise(L, d.y, 10)
    t_approx = time.perf_counter() - t0
    line = f"p={p:4d}  approximate {t_approx * 1e3:7.1f} ms  first ratios {approx.selected[:2]}"
    if p <= 100:
        t0 = time.perf_counter()
        Z, pairs = expand_ratios(L)
        exact = exact_forward_stepwise(Z, d.y, 10, pair_index=pairs)
        line += f"  | exact on {Z.shape[1]} ratios {(time.perf_counter() - t0) * 1e3:7.1f} ms"
    print(line)
