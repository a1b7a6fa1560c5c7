"""
Covering numbers of uniform simplices
=====================================

The uniform simplex on ``i`` points has every open unit ball holding a single
atom, so covering the radius-2 ball up to mass 1/2 needs about ``i/2`` balls.
No fixed number works for the whole sequence.
"""

from mmlimit.convergence import bmttb_check, cover_failure_certificate, greedy_cover
from mmlimit.gallery import gen_simplex_sequence, gen_uniform_simplex

# residual mass after each greedy center
s = gen_uniform_simplex(10)
rep = greedy_cover(s, 2.0, 1.0)
for M, resid in enumerate(rep.trace):
    print(f"M = {M:2d}  residual = {resid:.3f}  certified too few: {cover_failure_certificate(s, 2.0, 1.0, M, 0.5)}")

# the uniform check over the sequence fails with a mass-count certificate
(res,) = bmttb_check(gen_simplex_sequence(50), [(2.0, 1.0, 0.5)])
print(res.verdict.status, res.verdict.reason)
print("certificate:", res.verdict.details["certificate"])
