"""
An inverse system whose limit loses its basepoint
=================================================

Stage ``i`` holds the points ``e_j / k`` of l-infinity with ``j <= 2^i``. The
bonds fold pairs of rays together and preserve mass exactly, yet the mass of
every small ball around the basepoint shrinks below ``2^(2 - 1/r)``. In the
limit the basepoint has no mass around it.
"""

from mmlimit.category import Envelope, inverse_limit_stage, verify_system
from mmlimit.gallery import gen_inverse_example

sys = gen_inverse_example(10, 12)
v = verify_system(sys)
print("bonds verified:", v.ok, "pushforward equality:", all(v.details["bond_equality"]))

radii = [1 / 2, 1 / 3, 1 / 4]
env = Envelope(2.0, -1.0)
lim = inverse_limit_stage(sys, 10, r_grid=radii, envelope=env, verified=v)
for r, col in zip(radii, lim.mass_table.T):
    print(f"r = {r:.3f}  bound {env(r):.4f}  masses {col[:3]} ... {col[-1]}")
print(lim.verdict.status, "certified" if lim.verdict.certified else "", lim.verdict.reason)
print("threads at stage 10:", len(lim.threads))
