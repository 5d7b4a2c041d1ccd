"""
Projecting a pmf onto the convex pmfs
=====================================

The convex least-squares estimate is the closest convex pmf in squared
distance.  It is computed over mixture weights on the simplex, and its
optimality is certified by checking <p - q, T_k - q> <= 0 for every k.
"""

import numpy as np

from convexpmf import Pmf, benchmark_pmfs, convex_lse, triangular

p = Pmf([0.5, 0.25, 0.0, 0.25])
fit = convex_lse(p)
print("p        =", p.mass)
print("fit      =", np.round(fit.fit.mass, 5))
print("weights  =", np.round(fit.weights.weights, 5))
print("||p - fit||^2 = %.6g, KKT residual = %.1e" % (fit.sq_distance, fit.kkt_residual))

# the characterization, evaluated directly
L = 12
r = p.padded(L) - fit.fit.padded(L)
print("<p - q, T_k - q> for k=1..6:",
      [f"{np.dot(r, triangular(k).padded(L) - fit.fit.padded(L)):+.2e}" for k in range(1, 7)])

# the perturbed triangle p1_2 has a small dent at 2 that the fit smooths out
p12 = benchmark_pmfs()["p1_2"]
f12 = convex_lse(p12)
print("\np1_2 =", np.round(p12.mass, 5))
print("fit  =", np.round(f12.fit.padded(p12.mass.size), 5))
print("slope changes of the fit:", [round(f12.fit_delta(x), 5) for x in range(1, 7)])
