"""
Convex pmfs as mixtures of triangles
====================================

A pmf on the nonnegative integers is convex when every second difference
p(k+1) - 2 p(k) + p(k-1) is nonnegative.  The triangular pmfs T_k are the
extreme points: every convex pmf is a mixture of them.
"""

import numpy as np

from convexpmf import benchmark_pmfs, delta, knots, pmf_to_mixture, triangular, truncated_poisson

# T_6 decreases linearly on {0..5}; its only slope change sits just past the support
t6 = triangular(6)
print("T_6 =", np.round(t6.mass, 4))
print("second differences at 1..6:", [round(delta(t6, k), 4) for k in range(1, 7)])

# p0_2 mixes T_2, T_3, T_5, T_6; the weights come back from the slope changes
p02 = benchmark_pmfs()["p0_2"]
print("\np0_2 =", np.round(p02.mass, 4))
print("knots inside the support:", sorted(knots(p02)))
print("mixture weights:", np.round(pmf_to_mixture(p02).weights, 4))

# a truncated Poisson is not convex: the slope steepens after 0
pois = truncated_poisson(1.5, 5)
print("\ntruncated Poisson(1.5) delta(1) =", round(delta(pois, 1), 4))
