"""
Mass escaping along many short rays
===================================

Measures spread evenly over ``e_1/n, ..., e_k/n`` converge to the point mass
at the origin as ``n`` grows, uniformly in ``k``. For fixed ``n`` the mass
outside a compact set with finitely many rays decays only like ``1 - kbar/k``.
"""

import numpy as np

from mmlimit.gallery import gen_prokhorov_sharp
from mmlimit.weaklimit import MeasureSequence, generator_values, integrate, prokhorov_tightness

J, N = 64, 16
host, seq = gen_prokhorov_sharp(J, N)

# the tent max(1 - 2 d(., 0), 0) sees a gap of 2/n whatever k is
tent = generator_values(host, 1.0, 2.0, 0.0, 0)
for n in (2, 4, 8, 16):
    gaps = [tent[0] - integrate(tent, seq.weights[(n - 1) * J + k - 1]) for k in (1, 16, 64)]
    print(f"n = {n:2d}  gaps = {np.round(gaps, 12)}  2/n = {2 / n}")

# for n fixed, greedily grown sets of kbar rays leave 1 - kbar/k outside
n0 = 5
sub = MeasureSequence(host, seq.weights[(n0 - 1) * J : n0 * J])
rep = prokhorov_tightness(sub, 1 - 16 / J, radius=0.5 / n0)
print("rays used:", len(rep.centers))
print("residual at k = 16, 32, 64:", rep.residual[[15, 31, 63]])
