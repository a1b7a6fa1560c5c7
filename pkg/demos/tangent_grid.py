"""
Blowing up a line grid at its midpoint
======================================

Rescaling a fine grid by ``1/r`` around its middle and renormalizing the unit
ball gives spaces that all look like an interval. A single number of balls
covers every rescaled copy, and the mass doubling ratio stays near 2.
"""

from mmlimit.convergence import tangent_sequence
from mmlimit.gallery import gen_doubling_grid

s = gen_doubling_grid(2**12 + 1, 1.0)
scales = [2.0**-k for k in range(2, 9)]
tg = tangent_sequence(s, s.base, scales, [(1.0, 0.25, 0.0)])

res = tg.bmttb[0]
print("cover sizes per scale:", [rep.M for rep in res.reports])
print("verdict:", res.verdict.status, res.verdict.reason)
for r, q in zip(tg.doubling.scales, tg.doubling.ratios):
    print(f"r = {r:.5f}  m(B(2r)) / m(B(r)) = {q:.4f}")
print("summary over the smallest scales:", tg.doubling.summary)
