"""Worked examples with known behaviour, and the facts each one is expected to satisfy.

Every generator is deterministic. :func:`fixture` bundles an object with
executable facts so the same claims drive tests, demos and the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .category import Envelope, SystemOfSpaces
from .mmspace import BasisMetric, LineMetric, PointMap, PointedSpace, UniformMetric, pushforward
from .weaklimit import MeasureSequence

__all__ = [
    "Fact",
    "Fixture",
    "gen_uniform_simplex",
    "gen_simplex_sequence",
    "gen_inverse_example",
    "gen_prokhorov_sharp",
    "gen_doubling_grid",
    "gen_merging_chain",
    "gen_constant_system",
    "fixture",
    "fixture_doc",
    "GOLDEN",
]


@dataclass
class Fact:
    """A claim about a fixture: ``check(obj)`` must equal ``expected`` (within ``tol``)."""

    description: str
    check: Callable[[Any], Any]
    expected: Any
    tol: float = 0.0

    def holds(self, obj) -> bool:
        got = self.check(obj)
        if isinstance(self.expected, float):
            return abs(float(got) - self.expected) <= self.tol
        return got == self.expected


@dataclass
class Fixture:
    name: str
    obj: Any
    params: dict
    facts: list[Fact] = field(default_factory=list)

    def failing(self) -> list[str]:
        return [f.description for f in self.facts if not f.holds(self.obj)]


def gen_uniform_simplex(i: int) -> PointedSpace:
    """``i`` points at mutual distance 1, each of mass ``1/i``, based at 0."""
    if i < 1:
        raise ValueError("need at least one point")
    return PointedSpace(UniformMetric(i, 1.0), np.full(i, 1.0 / i), 0)


def gen_simplex_sequence(i_max: int) -> list[PointedSpace]:
    return [gen_uniform_simplex(i) for i in range(1, i_max + 1)]


def _inverse_stage(i: int, K: int, base_scale: int) -> PointedSpace:
    rays = 1 << i
    k = np.repeat(np.arange(1, K + 1), rays)
    j = np.tile(np.arange(1, rays + 1), K)
    # mass 2^-(k+i) is exact in binary
    w = np.ldexp(1.0, -(k + i))
    base = (base_scale - 1) * rays
    return PointedSpace(BasisMetric(j, k), w, base)


def gen_inverse_example(i_max: int, K: int, basepoint: str = "bond") -> SystemOfSpaces:
    """Inverse system of scaled basis vectors ``e_j / k`` in l-infinity.

    Stage ``i`` (1-based) holds ``j <= 2^i`` and ``k <= K`` with mass
    ``2^-(k+i)``; the bond sends ``e_j / k`` to ``e_ceil(j/2) / k``.
    ``basepoint="bond"`` bases every stage at ``e_1 / K``, which the bonds fix;
    ``basepoint="growing"`` bases stage ``i`` at ``e_1 / i``, which they do not.
    """
    if not 2 <= i_max <= K:
        raise ValueError("need 2 <= i_max <= K")
    if basepoint == "bond":
        scales = [K] * i_max
    elif basepoint == "growing":
        scales = list(range(1, i_max + 1))
    else:
        raise ValueError(f"unknown basepoint rule {basepoint!r}")
    spaces = [_inverse_stage(i, K, scales[i - 1]) for i in range(1, i_max + 1)]
    bonds = []
    for i in range(1, i_max):
        src, dst = spaces[i], spaces[i - 1]
        rays = 1 << (i + 1)
        idx = np.arange(src.n)
        k, j = idx // rays, idx % rays
        bonds.append(PointMap(src, dst, k * (rays // 2) + j // 2))
    meta = {"K": K, "i_max": i_max, "basepoint": basepoint, "envelope": Envelope(2.0, -1.0).to_dict()}
    return SystemOfSpaces("inverse", spaces, bonds, meta)


def gen_prokhorov_sharp(J: int, N: int) -> tuple[PointedSpace, MeasureSequence]:
    """Host ``{0} + {e_j / n}`` with point mass at the origin, and measures ``mu_{n,k}``.

    ``mu_{n,k}`` puts mass ``1/k`` on each of ``e_1/n, ..., e_k/n``; the
    sequence runs ``n = 1..N`` outer, ``k = 1..J`` inner.
    """
    if J < 1 or N < 1:
        raise ValueError("need J >= 1 and N >= 1")
    n = np.repeat(np.arange(1, N + 1), J)
    j = np.tile(np.arange(1, J + 1), N)
    ray = np.concatenate([[-1], j])
    scale = np.concatenate([[0], n])
    w = np.zeros(1 + N * J)
    w[0] = 1.0
    host = PointedSpace(BasisMetric(ray, scale), w, 0)
    measures = []
    for a in range(1, N + 1):
        for k in range(1, J + 1):
            m = np.zeros(host.n)
            start = 1 + (a - 1) * J
            m[start : start + k] = 1.0 / k
            measures.append(m)
    return host, MeasureSequence(host, np.vstack(measures))


def gen_doubling_grid(points: int, extent: float = 1.0) -> PointedSpace:
    """Evenly spaced points on ``[0, extent]`` with unit masses, based at the middle."""
    if points < 3 or points % 2 == 0:
        raise ValueError("need an odd number of points, at least 3")
    coords = np.arange(points) * float(extent) / (points - 1)
    return PointedSpace(LineMetric(coords), np.ones(points), (points - 1) // 2)


def gen_merging_chain(levels: int = 6, spacing: float = 2.0**-5) -> SystemOfSpaces:
    """Direct system of line grids that halve their point count at each stage.

    Stage ``i`` (1-based) has ``2^(levels-i) + 1`` points ``0, h, 2h, ...``
    based at 0; the bond ``k -> floor(k/2)`` merges neighbours and the masses
    are pushed forward, so every bond preserves mass exactly.
    """
    if levels < 1:
        raise ValueError("need at least one level")
    h = float(spacing)
    first = (1 << (levels - 1)) + 1
    w = np.full(first, math.ldexp(1.0, -(levels - 1)))
    spaces = [PointedSpace(LineMetric(np.arange(first) * h), w, 0)]
    bonds = []
    for i in range(2, levels + 1):
        n = (1 << (levels - i)) + 1
        dst_stub = PointedSpace(LineMetric(np.arange(n) * h), np.zeros(n), 0)
        img = np.arange(spaces[-1].n) // 2
        pf = pushforward(spaces[-1].weight, PointMap(spaces[-1], dst_stub, img)).weight
        dst = dst_stub.with_weight(pf)
        bonds.append(PointMap(spaces[-1], dst, img))
        spaces.append(dst)
    return SystemOfSpaces("direct", spaces, bonds, {"levels": levels, "spacing": h})


def gen_constant_system(s: PointedSpace, N: int, kind: str = "direct") -> SystemOfSpaces:
    """``N`` copies of ``s`` joined by identities."""
    ident = np.arange(s.n)
    return SystemOfSpaces(kind, [s] * N, [PointMap(s, s, ident) for _ in range(N - 1)], {"constant": True})


# ---------------------------------------------------------------------------
# fixtures with executable facts


def _simplex_facts():
    from .mmspace import ball_mass

    return [
        Fact("total mass is one", lambda s: s.total_mass, 1.0, 1e-12),
        Fact("base ball of radius 2 holds everything", lambda s: ball_mass(s, 0, 2.0), 1.0, 1e-12),
        Fact("open unit ball holds one atom", lambda s: ball_mass(s, 0, 1.0) * s.n, 1.0, 1e-12),
    ]


def _inverse_facts():
    from .category import inverse_limit_stage, verify_system

    return [
        Fact("bonds are morphisms preserving mass", lambda sys: bool(verify_system(sys))
             and all(verify_system(sys).details["bond_equality"]), True),
        Fact("base-ball masses obey the vanishing envelope",
             lambda sys: inverse_limit_stage(sys, len(sys), r_grid=[1 / 2, 1 / 3, 1 / 4],
                                             envelope=Envelope(2.0, -1.0)).verdict.certified, True),
    ]


def _prokhorov_facts():
    from .weaklimit import prokhorov_tightness

    return [
        Fact("host mass sits at the origin", lambda hs: float(hs[0].weight[0]), 1.0),
        Fact("a single 1/2-ball captures the tail at eps = 1/2",
             lambda hs: len(prokhorov_tightness(hs[1], 0.5).centers), 1),
    ]


def _grid_facts():
    from .convergence import pointwise_doubling_profile

    scales = [2.0**-k for k in range(2, 9)]
    return [
        Fact("doubling ratio at the base stays at most 5/2 at small scales",
             lambda s: pointwise_doubling_profile(s, s.base, scales).summary <= 2.5, True),
    ]


def fixture(name: str, **params) -> Fixture:
    """Named example with its facts: ``simplex``, ``inverse``, ``prokhorov``, ``grid``, ``merging``."""
    if name == "simplex":
        i = params.get("i", 8)
        return Fixture(name, gen_uniform_simplex(i), {"i": i}, _simplex_facts())
    if name == "inverse":
        p = {"i_max": params.get("i_max", 4), "K": params.get("K", 6)}
        return Fixture(name, gen_inverse_example(**p), p, _inverse_facts())
    if name == "prokhorov":
        p = {"J": params.get("J", 8), "N": params.get("N", 4)}
        return Fixture(name, gen_prokhorov_sharp(**p), p, _prokhorov_facts())
    if name == "grid":
        p = {"points": params.get("points", 1025), "extent": params.get("extent", 1.0)}
        return Fixture(name, gen_doubling_grid(**p), p, _grid_facts())
    if name == "merging":
        p = {"levels": params.get("levels", 6)}
        from .category import verify_system

        facts = [Fact("every bond is a mass-preserving morphism",
                      lambda sys: all(verify_system(sys).details["bond_equality"]), True)]
        return Fixture(name, gen_merging_chain(**p), p, facts)
    raise ValueError(f"unknown fixture {name!r}")


def fixture_doc(fx: Fixture) -> dict:
    """JSON document of a fixture's object, in the layout the CLI reads."""
    from .io import space_to_doc, system_to_docs

    obj = fx.obj
    if isinstance(obj, SystemOfSpaces):
        return system_to_docs(obj)
    if isinstance(obj, tuple):
        host, seq = obj
        return {"host": space_to_doc(host), "measures": seq.weights.tolist()}
    return space_to_doc(obj)


# sha256 of the canonical document of each default fixture
GOLDEN: dict[str, str] = {
    "simplex": "ad92abb831f1b7e977aeb8d1542f07bae1f2d0b7cf81b7e65d8ab31981a9bebe",
    "inverse": "8f645b8f77850d8c841b1c99e9f3fdacd3b2fb41f618b221c1f8dae5213e0d4b",
    "prokhorov": "a95bb21cacb6d50fb588bff6c20ad65ed732fc6bf129708d998812c79e467be3",
    "grid": "e6eaa08a6e7c5334202ccf80f4a5e107dd09ce2f62940130be073cc14980ef3e",
    "merging": "5c51f05b1a6614b157b6ac4c6b0eff36979e1ee1b4eb06a01106086e95dc6a50",
}
