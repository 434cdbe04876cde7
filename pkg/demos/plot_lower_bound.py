"""
A hard instance and its packing
===============================

The staircase function ``f0`` climbs in small steps with a flat landing every
``2r``.  A single-direction attack of radius ``r`` can always push the input
onto the next step, so the functional ``G`` measuring the worst-case change
grows like ``r^{beta}``.  We measure that growth and then build a packing of
bumped copies of ``f0`` whose members are pairwise far apart.
"""

import numpy as np

from advreg import SeededRng, Soda, StaircaseF0, build_packing, deviation_functional_G, rate_slope
from advreg.testbed import hamming

beta, C = 0.5, 2.0
radii = [0.005, 0.01, 0.02, 0.04]
G = [deviation_functional_G(StaircaseF0(beta, C, r), Soda(r), q=1, quad=2**14) for r in radii]
for r, g in zip(radii, G):
    print(f"r = {r:.3f}   G = {g:.5f}   G / r^beta = {g / r**beta:.4f}")
print(f"slope of log G against log r: {rate_slope(list(zip(radii, G))).slope:.3f}  (expected {beta})")

###############################################################################
# Packing on 16 cells.  The sign vectors are drawn at random from a seeded
# stream and kept only if every pair differs in at least 1/8 of the cells.

base = StaircaseF0(beta, C, 0.02)
family = build_packing(base, beta, C, 16, 8, SeededRng(9))
dists = [hamming(a.w, b.w) for i, a in enumerate(family) for b in family[i + 1:]]
print(f"\n{len(family)} members, Hamming distances from {min(dists)} to {max(dists)}")

x = ((np.arange(2048) + 0.5) / 2048)[:, None]
print("L2 distance of each member to f0:",
      np.round([np.sqrt(np.mean((f(x) - base(x)) ** 2)) for f in family], 6))
