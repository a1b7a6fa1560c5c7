"""Morphisms of pointed metric measure spaces, direct and inverse systems, stage-N limits.

A morphism ``f: X -> Y`` fixes basepoints, does not increase distances between
support points, and pushes the source measure below the target measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .mmspace import (
    DenseMetric,
    PointMap,
    PointedSpace,
    SubsetMetric,
    ball_mass,
    pushforward,
    support,
)
from .report import Verdict, fmt

__all__ = [
    "NotAnObject",
    "SystemOfSpaces",
    "Envelope",
    "DirectLimit",
    "Thread",
    "ThreadTable",
    "InverseLimit",
    "verify_morphism",
    "verify_system",
    "direct_limit_stage",
    "direct_limit_transition",
    "check_direct_stability",
    "threads",
    "inverse_limit_stage",
]

DIRECT = "direct"
INVERSE = "inverse"

# elements of a distance block computed at once
_BLOCK = 1 << 22
# pair work above which composite and monotonicity sweeps are skipped
_PAIR_BUDGET = 2 * 10**8


class NotAnObject(ValueError):
    """The basepoint of a space carries no mass."""


def _require_object(s: PointedSpace, name: str = "space"):
    if not s.weight[s.base] > 0:
        raise NotAnObject(f"{name} is not an object of the category: basepoint has zero mass")


@dataclass
class SystemOfSpaces:
    """A chain of spaces with bonding maps.

    ``kind="direct"``: ``bonds[i]`` maps ``spaces[i] -> spaces[i+1]``.
    ``kind="inverse"``: ``bonds[i]`` maps ``spaces[i+1] -> spaces[i]``.
    """

    kind: str
    spaces: list[PointedSpace]
    bonds: list[PointMap]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (DIRECT, INVERSE):
            raise ValueError(f"unknown system kind {self.kind!r}")
        if len(self.bonds) != len(self.spaces) - 1:
            raise ValueError("need exactly one bond between consecutive spaces")
        for i, b in enumerate(self.bonds):
            src, dst = (i, i + 1) if self.kind == DIRECT else (i + 1, i)
            if b.src.n != self.spaces[src].n or b.dst.n != self.spaces[dst].n:
                raise ValueError(f"bond {i} does not connect spaces {src} and {dst}")

    def __len__(self):
        return len(self.spaces)

    def composite(self, i: int, j: int) -> PointMap:
        """The composite bond between stages ``i <= j`` (direct: ``X_i -> X_j``, inverse: ``X_j -> X_i``)."""
        if not 0 <= i <= j < len(self.spaces):
            raise IndexError("need 0 <= i <= j < len(spaces)")
        if self.kind == DIRECT:
            img = np.arange(self.spaces[i].n)
            for k in range(i, j):
                img = self.bonds[k].img[img]
            return PointMap(self.spaces[i], self.spaces[j], img)
        img = np.arange(self.spaces[j].n)
        for k in range(j - 1, i - 1, -1):
            img = self.bonds[k].img[img]
        return PointMap(self.spaces[j], self.spaces[i], img)


def _lipschitz_witness(f: PointMap, spt: np.ndarray):
    """First support pair whose distance grows under ``f``, scanning in row chunks."""
    X, Y = f.src, f.dst
    if spt.size < 2:
        return None
    step = max(1, _BLOCK // spt.size)
    tgt = f.img[spt]
    # both distances are symmetric, so columns from the chunk start suffice
    for s0 in range(0, spt.size, step):
        rows = spt[s0 : s0 + step]
        cols = spt[s0:]
        grow = Y.block(f.img[rows], tgt[s0:]) > X.block(rows, cols)
        if grow.any():
            a, b = np.argwhere(grow)[0]
            return int(rows[a]), int(cols[b])
    return None


def verify_morphism(f: PointMap, tol: float = 1e-12) -> Verdict:
    """Check the three morphism conditions exactly (mass with tolerance ``tol``).

    Raises :class:`NotAnObject` when either basepoint carries no mass.
    """
    X, Y = f.src, f.dst
    _require_object(X, "source")
    _require_object(Y, "target")
    if f.img[X.base] != Y.base:
        return Verdict.failed(f"basepoint maps to {int(f.img[X.base])}, not {Y.base}", certified=True,
                              condition="basepoint")
    w = _lipschitz_witness(f, support(X))
    if w is not None:
        a, b = w
        dx = float(X.block([a], [b])[0, 0])
        dy = float(Y.block([f.img[a]], [f.img[b]])[0, 0])
        return Verdict.failed(f"distance grows on ({a},{b}): {fmt(dx)} -> {fmt(dy)}", certified=True,
                              condition="lipschitz", pair=[a, b])
    pf = pushforward(X.weight, f).weight
    excess = pf - Y.weight
    k = int(np.argmax(excess))
    if excess[k] > tol:
        return Verdict.failed(f"pushforward exceeds target mass at {k} by {fmt(excess[k])}", certified=True,
                              condition="mass", atom=k)
    return Verdict.passed(equality=bool(np.array_equal(pf, Y.weight)))


def verify_system(sys: SystemOfSpaces, composites: str | bool = "auto", tol: float = 1e-12,
                  pair_budget: int = _PAIR_BUDGET) -> Verdict:
    """Verify every bond, and the composites when affordable.

    ``composites="auto"`` checks all composites if the pair work fits in
    ``pair_budget``; otherwise they are implied by the bonds, since morphisms
    are closed under composition.
    """
    for i, s in enumerate(sys.spaces):
        _require_object(s, f"space {i}")
    equality = []
    for i, b in enumerate(sys.bonds):
        v = verify_morphism(b, tol)
        if not v:
            return Verdict.failed(f"bond {i}: {v.reason}", certified=True, bond=i, **v.details)
        equality.append(v.details["equality"])
    n = len(sys.spaces)
    work = sum(support(sys.spaces[i]).size ** 2 for i in range(n)) * n
    do_comp = composites is True or (composites == "auto" and work <= pair_budget)
    details = {"bond_equality": equality, "composites_checked": bool(do_comp)}
    if do_comp:
        for i in range(n):
            for j in range(i + 2, n):
                v = verify_morphism(sys.composite(i, j), tol)
                if not v:
                    return Verdict.failed(f"composite ({i},{j}): {v.reason}", certified=True, **v.details)
    else:
        details["note"] = "composites follow from the verified bonds"
    return Verdict.passed(**details)


# ---------------------------------------------------------------------------
# direct limits


@dataclass
class DirectLimit:
    space: PointedSpace
    maps: list[PointMap]  # stage i -> limit, for i < N
    stage: int
    carrier: np.ndarray  # support points of the last stage that represent limit points
    mass_table: np.ndarray  # (stages, radii) of m_i(B(p_i, R))
    R_grid: list[float]
    verdict: Verdict

    def to_dict(self):
        return {"stage": self.stage, "n": self.space.n, "carrier": self.carrier.tolist(),
                "weight": self.space.weight.tolist(), "R": self.R_grid,
                "masses": self.mass_table.tolist(), "verdict": self.verdict.to_dict()}


def _ulp_floor(d: np.ndarray) -> np.ndarray:
    return -10 * np.spacing(np.abs(d))


def _carrier(X: PointedSpace, tol: float):
    """Support of ``X`` grouped into classes of points within ``tol``; class of every point."""
    spt = support(X)
    cls = np.full(X.n, -1, dtype=np.intp)
    reps = []
    for p in spt:
        if cls[p] >= 0:
            continue
        cls[p] = len(reps)
        if tol > 0:
            near = spt[X.block([p], spt)[0] <= tol]
            cls[near[cls[near] < 0]] = len(reps)
        reps.append(int(p))
    reps = np.array(reps, dtype=np.intp)
    base_cls = cls[X.base]
    cls[cls < 0] = base_cls
    return reps, cls


def _limit_space(X: PointedSpace, reps: np.ndarray, cls: np.ndarray) -> PointedSpace:
    spt = support(X)
    w = np.zeros(reps.size)
    np.add.at(w, cls[spt], X.weight[spt])
    if reps.size <= 2048:
        metric = DenseMetric(X.block(reps, reps))
    else:
        metric = SubsetMetric(X.metric, reps)
    labels = None if X.labels is None else [X.labels[i] for i in reps]
    return PointedSpace(metric, w, int(cls[X.base]), labels)


def _default_radii(s: PointedSpace) -> list[float]:
    d = s.diameter
    if d <= 0:
        return [1.0]
    return [d / 8, d / 4, d / 2, d, 2 * d]


def _monotone(col: np.ndarray, increasing: bool, tol: float = 1e-12) -> bool:
    step = np.diff(col)
    slack = tol * np.maximum(1.0, np.abs(col[1:]))
    return bool((step >= -slack).all()) if increasing else bool((step <= slack).all())


def direct_limit_stage(sys: SystemOfSpaces, N: int, tol: float = 0.0, R_grid: Sequence[float] | None = None,
                       check: bool = True) -> DirectLimit:
    """Stage-``N`` model of a direct limit, built on the support of the ``N``-th space.

    Points within ``tol`` are identified (none for ``tol=0``). Stage ``i``
    maps in through the composite bonds; off-support points go to the base.
    The verdict checks the base-ball mass columns: they must be non-decreasing,
    and their prefix sup is reported together with the radii still growing
    at the last step.
    """
    if sys.kind != DIRECT:
        raise ValueError("need a direct system")
    if not 1 <= N <= len(sys.spaces):
        raise ValueError(f"stage must be in 1..{len(sys.spaces)}")
    if check:
        v = verify_system(sys)
        if not v:
            raise ValueError(f"not a valid direct system: {v.reason}")
    L = N - 1
    XL = sys.spaces[L]
    reps, cls = _carrier(XL, tol)
    lim = _limit_space(XL, reps, cls)
    maps = []
    for i in range(N):
        comp = sys.composite(i, L).img
        img = cls[comp]
        off = np.ones(sys.spaces[i].n, dtype=bool)
        off[support(sys.spaces[i])] = False
        img[off] = lim.base
        maps.append(PointMap(sys.spaces[i], lim, img))
    if L >= 1:
        prev = sys.spaces[L - 1]
        spt = support(prev)
        if spt.size and spt.size**2 <= _PAIR_BUDGET:
            step = max(1, _BLOCK // spt.size)
            b = sys.bonds[L - 1].img
            for s0 in range(0, spt.size, step):
                rows = spt[s0 : s0 + step]
                d0 = prev.block(rows, spt)
                dec = d0 - XL.block(b[rows], b[spt])
                if (dec < _ulp_floor(d0)).any():
                    raise ValueError("not a valid direct system at numeric precision")
    R_grid = _default_radii(XL) if R_grid is None else [float(r) for r in R_grid]
    table = np.array([[ball_mass(s, s.base, R) for R in R_grid] for s in sys.spaces[:N]])
    verdict = _direct_verdict(table, R_grid)
    return DirectLimit(lim, maps, N, reps, table, R_grid, verdict)


def _direct_verdict(table: np.ndarray, R_grid: list[float]) -> Verdict:
    for k, R in enumerate(R_grid):
        if not _monotone(table[:, k], increasing=True):
            return Verdict.failed(f"base-ball masses decrease at R = {fmt(R)}", certified=True, R=R)
    growing = []
    if table.shape[0] >= 2:
        inc = table[-1] - table[-2]
        growing = [R for R, d, m in zip(R_grid, inc, table[-1]) if d > 1e-12 * max(1.0, abs(m))]
    # finite masses on every radius: the prefix is uniformly boundedly finite
    return Verdict.passed("base-ball masses are finite and non-decreasing", prefix_limited=True,
                          sup=table.max(axis=0).tolist(), growing_at=growing)


def direct_limit_transition(sys: SystemOfSpaces, N: int, tol: float = 0.0) -> tuple[DirectLimit, DirectLimit, PointMap]:
    """Limits at stages ``N`` and ``N+1`` and the induced map between them."""
    a = direct_limit_stage(sys, N, tol)
    b = direct_limit_stage(sys, N + 1, tol, check=False)
    _, cls_b = _carrier(sys.spaces[N], tol)
    img = cls_b[sys.bonds[N - 1].img[a.carrier]]
    return a, b, PointMap(a.space, b.space, img)


def check_direct_stability(sys: SystemOfSpaces, N: int, tol: float = 0.0) -> Verdict:
    """The stage maps into the two limits commute with the induced transition."""
    a, b, t = direct_limit_transition(sys, N, tol)
    for i in range(N):
        spt = support(sys.spaces[i])
        bad = spt[b.maps[i].img[spt] != t.img[a.maps[i].img[spt]]]
        if bad.size:
            return Verdict.failed(f"stage {i} point {int(bad[0])} does not commute", certified=True)
    v = verify_morphism(t)
    if not v:
        return Verdict.failed(f"transition is not a morphism: {v.reason}", certified=True)
    return Verdict.passed(equality=v.details["equality"])


# ---------------------------------------------------------------------------
# inverse limits


@dataclass(frozen=True)
class Envelope:
    """The bound ``r -> 2 ** (a + b / r)``; it vanishes at ``r -> 0`` when ``b < 0``."""

    a: float
    b: float

    def __call__(self, r: float) -> float:
        return 2.0 ** (self.a + self.b / r)

    def vanishes(self) -> bool:
        return self.b < 0

    def to_dict(self):
        return {"a": self.a, "b": self.b}

    @classmethod
    def from_doc(cls, doc) -> "Envelope":
        return cls(float(doc["a"]), float(doc["b"]))


Thread = tuple


@dataclass
class ThreadTable:
    """Compatible sequences, one column per thread: ``stages[i, t]`` is its point at stage ``i``."""

    stages: np.ndarray

    def __len__(self):
        return self.stages.shape[1]

    def __iter__(self) -> Iterator[Thread]:
        for t in range(len(self)):
            yield tuple(int(x) for x in self.stages[:, t])

    def __getitem__(self, t) -> Thread:
        return tuple(int(x) for x in self.stages[:, t])


def threads(sys: SystemOfSpaces, N: int) -> ThreadTable:
    """Threads through the support of the first ``N`` stages, indexed by their last point."""
    if sys.kind != INVERSE:
        raise ValueError("need an inverse system")
    L = N - 1
    spt = support(sys.spaces[L])
    rows = np.empty((N, spt.size), dtype=np.intp)
    keep = np.ones(spt.size, dtype=bool)
    for i in range(N):
        rows[i] = sys.composite(i, L).img[spt]
        keep &= sys.spaces[i].weight[rows[i]] > 0
    return ThreadTable(rows[:, keep])


@dataclass
class InverseLimit:
    space: PointedSpace
    projections: list[PointMap]  # limit -> stage i, for i < N
    threads: ThreadTable
    base_thread: int | None
    r_grid: list[float]
    mass_table: np.ndarray  # (stages, radii) of m_i(B(p_i, r))
    verdict: Verdict
    notes: list[str] = field(default_factory=list)

    def to_dict(self):
        return {"n": self.space.n, "base_thread": self.base_thread, "r": self.r_grid,
                "masses": self.mass_table.tolist(), "verdict": self.verdict.to_dict(), "notes": self.notes}


def inverse_limit_stage(sys: SystemOfSpaces, N: int, tol: float = 1e-9, r_grid: Sequence[float] | None = None,
                        envelope: Envelope | Callable[[float], float] | None = None,
                        pair_budget: int = 5 * 10**7, verified: Verdict | None = None) -> InverseLimit:
    """Stage-``N`` model of an inverse limit: threads with their last-stage masses.

    The verdict is a certified failure when the basepoints do not form a
    thread, when the base-ball masses sit under an ``envelope`` that vanishes
    at small radii, or when some base-ball mass column has dropped to ``tol``.
    Masses that have stopped changing count as evidence for existence.
    Pass the result of :func:`verify_system` as ``verified`` to skip
    re-checking the bonds.
    """
    if sys.kind != INVERSE:
        raise ValueError("need an inverse system")
    if not 1 <= N <= len(sys.spaces):
        raise ValueError(f"stage must be in 1..{len(sys.spaces)}")
    notes = []
    v = verify_system(sys) if verified is None else verified
    bad_base = not v and v.details.get("condition") == "basepoint"
    if not v and not bad_base:
        raise ValueError(f"not a valid inverse system: {v.reason}")
    L = N - 1
    XL = sys.spaces[L]
    T = threads(sys, N)
    ends = T.stages[L]
    pos = np.flatnonzero(ends == XL.base)
    base_thread = None
    if pos.size and all(T.stages[i, pos[0]] == sys.spaces[i].base for i in range(N)):
        base_thread = int(pos[0])
    if ends.size <= 2048:
        metric = DenseMetric(XL.block(ends, ends))
    else:
        metric = SubsetMetric(XL.metric, ends)
    labels = None if XL.labels is None else [XL.labels[i] for i in ends]
    lim = PointedSpace(metric, XL.weight[ends], 0 if base_thread is None else base_thread, labels)
    projections = [PointMap(lim, sys.spaces[i], T.stages[i]) for i in range(N)]

    # distances along a thread pair never decrease with the stage
    if len(T) ** 2 * N <= pair_budget:
        step = max(1, _BLOCK // max(len(T), 1))
        for s0 in range(0, len(T), step):
            sl = slice(s0, s0 + step)
            prev = None
            for i in range(N):
                d = sys.spaces[i].block(T.stages[i, sl], T.stages[i])
                if prev is not None and (d < prev).any():
                    raise AssertionError(f"thread distances decrease at stage {i}")
                prev = d
    else:
        notes.append("thread distance monotonicity follows from the verified bonds")

    r_grid = [0.5, 0.25, 0.125] if r_grid is None else [float(r) for r in r_grid]
    table = np.array([[ball_mass(s, s.base, r) for r in r_grid] for s in sys.spaces[:N]])
    for k, r in enumerate(r_grid):
        if base_thread is not None and not _monotone(table[:, k], increasing=False):
            raise AssertionError(f"base-ball masses increase at r = {fmt(r)}")

    verdict = _inverse_verdict(table, r_grid, tol, envelope, base_thread is None)
    return InverseLimit(lim, projections, T, base_thread, r_grid, table, verdict, notes)


def _inverse_verdict(table, r_grid, tol, envelope, no_base) -> Verdict:
    if no_base:
        return Verdict.failed("basepoints do not form a thread", certified=True)
    if envelope is not None:
        if isinstance(envelope, dict):
            envelope = Envelope.from_doc(envelope)
        bounds = np.array([envelope(r) for r in r_grid])
        vanishes = envelope.vanishes() if hasattr(envelope, "vanishes") else _vanishes(envelope, min(r_grid), tol)
        if vanishes and (table <= bounds[None, :]).all():
            return Verdict.failed("base-ball masses stay under a bound that vanishes as r -> 0", certified=True,
                                  envelope=bounds.tolist())
    for k, r in enumerate(r_grid):
        if table[-1, k] <= tol:
            return Verdict.failed(f"base-ball mass at r = {fmt(r)} has dropped to {fmt(table[-1, k])}",
                                  certified=True, r=r)
    if table.shape[0] >= 2 and np.allclose(table[-1], table[-2], rtol=tol, atol=0):
        return Verdict.passed("base-ball masses have stopped changing", prefix_limited=True)
    return Verdict.unknown("base-ball masses still shrinking at the last stage", prefix_limited=True)


def _vanishes(f, r0: float, tol: float) -> bool:
    r = r0
    for _ in range(64):
        r /= 2
        if f(r) <= tol:
            return True
    return False
