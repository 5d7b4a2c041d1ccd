"""
Rejection rates against the published tables
=============================================

A reduced run (N = 100 replications) of both simulation tables.  The full
run uses N = 500 and takes under a minute: ``convexpmf simulate --preset
both --seed 1``.
"""

import time

from convexpmf import emit_table, preset, run_plan
from convexpmf.simulation import compare_to_published

t0 = time.time()
table = run_plan(preset("both", N=100, B=1000, seed=1))
print(emit_table(table, "text").decode())
print("finished in %.1fs, %d KKT violations" % (time.time() - t0, table.kkt_violations))

# the tolerance model adds our binomial SE to the published one
off = [(k, ours, ref) for k, ours, ref, _, ok in compare_to_published(table) if not ok]
print("cells outside 3 combined standard errors:", len(off))
for (pmf, n, method, vn), ours, ref in off:
    print(f"  {pmf} n={n} {method} {vn}: {ours:.3f} vs {ref:.3f}")
