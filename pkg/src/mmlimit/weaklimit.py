"""Weak convergence of finite measures on a common finite host.

Weak convergence is metrized by a weighted sum of integral gaps against an
enumerated family of bounded Lipschitz test functions built from
``max(alpha - beta * d(., y) / diam, gamma)`` with dyadic coefficients, closed
under negation and finite maxima. Limits along a sequence are replaced by
statistics over a tail window of the sequence.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .mmspace import (
    CLOSED,
    OPEN,
    Measure,
    PointedSpace,
    PointMap,
    as_weight,
    masked_sum,
    pushforward,
)
from .report import Verdict, fmt

__all__ = [
    "TestFamily",
    "MeasureSequence",
    "build_test_family",
    "generator_values",
    "integrate",
    "delta_metric",
    "delta_matrix",
    "is_asymptotically_cauchy",
    "weak_limit",
    "portmanteau_report",
    "prokhorov_tightness",
    "lift_measure",
    "tail_length",
    "load_or_build_family",
]


@dataclass(frozen=True, eq=False)
class TestFamily:
    """Normalized test functions on ``host`` (rows of ``values``)."""

    host: PointedSpace
    values: np.ndarray
    lip: np.ndarray
    depth: int
    provenance: tuple = ()

    __test__ = False  # not a pytest class

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """``2^-n`` for ``n = 1..len``."""
        return np.ldexp(1.0, -np.arange(1, len(self) + 1))

    @property
    def truncation_error(self) -> float:
        """Bound on the omitted tail of the series for probability-like measures."""
        return math.ldexp(1.0, -len(self))

    def restrict_to_ball(self, radius: float) -> np.ndarray:
        """Indices of functions vanishing outside ``B(p, radius)``."""
        outside = self.host.row(self.host.base) >= radius
        return np.flatnonzero(~np.any(self.values[:, outside] != 0, axis=1))


@dataclass(frozen=True, eq=False)
class MeasureSequence:
    host: PointedSpace
    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if w.shape[1] != self.host.n:
            raise ValueError("measures do not match the host")
        if np.any(w < 0):
            raise ValueError("negative weights")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def of(cls, measures: Sequence, host: PointedSpace | None = None) -> "MeasureSequence":
        if isinstance(measures, MeasureSequence):
            return measures
        measures = list(measures)
        if host is None:
            host = measures[0].host
        for m in measures:
            if isinstance(m, Measure) and m.host is not host and m.host.n != host.n:
                raise ValueError("measures live on different hosts")
        return cls(host, np.vstack([as_weight(m) for m in measures]))

    def __len__(self):
        return self.weights.shape[0]

    def __getitem__(self, i) -> Measure:
        return Measure(self.host, self.weights[i])


def _as_seq(seq, host=None) -> MeasureSequence:
    return seq if isinstance(seq, MeasureSequence) else MeasureSequence.of(seq, host)


def tail_length(m: int, tail: int | None = None) -> int:
    """Default tail window: the last ``max(2, ceil(m / 10))`` elements, capped at ``m``."""
    if tail is None:
        tail = max(2, -(-m // 10))
    return max(1, min(int(tail), m))


# ---------------------------------------------------------------------------
# test family


def _v2(k: int) -> int:
    return (k & -k).bit_length() - 1 if k else 0


def _coefficients(depth: int) -> list[tuple[float, float, float]]:
    """Dyadic triples ``(alpha, beta, gamma)`` in ``[-2, 2]`` in enumeration order.

    Ordered by the coarsest dyadic level needed, then by l1 size, then
    lexicographically, so simple functions come first.
    """
    scale = 1 << depth
    ks = range(-2 * scale, 2 * scale + 1)

    def level(k):
        return 0 if k == 0 else max(0, depth - _v2(abs(k)))

    trip = [(a, b, c) for a in ks for b in ks for c in ks]
    trip.sort(key=lambda t: (max(level(t[0]), level(t[1]), level(t[2])),
                             abs(t[0]) + abs(t[1]) + abs(t[2]), t))
    return [(a / scale, b / scale, c / scale) for a, b, c in trip]


def generator_values(s: PointedSpace, alpha: float, beta: float, gamma: float, y: int) -> np.ndarray:
    """``max(alpha - beta * d(., y) / diam, gamma)`` on the points of ``s``."""
    diam = s.diameter if s.diameter > 0 else 1.0
    return np.maximum(alpha - beta * (s.row(int(y)) / diam), gamma)


def _canon(v: np.ndarray) -> np.ndarray:
    return v + 0.0  # turns -0.0 into 0.0


def build_test_family(s: PointedSpace, depth: int = 3, cap: int | None = None) -> TestFamily:
    """Enumerate the normalized test family of ``s`` at ``depth``.

    Single generators come first (each followed by its negation), then maxima
    of two and three distinct generators, drawn from the first ``cap``
    distinct generators. Functions that vanish identically or repeat an earlier
    normalized vector are skipped. The list stops at ``cap = 64 * depth``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    cap = 64 * depth if cap is None else int(cap)
    n = s.n
    diam = s.diameter if s.diameter > 0 else 1.0
    D = s.dist / diam if n <= 4096 else None
    seen: set[bytes] = set()
    values: list[np.ndarray] = []
    lips: list[float] = []
    prov: list[tuple] = []
    gens: list[np.ndarray] = []
    gen_lip: list[float] = []
    gen_desc: list[tuple] = []
    gen_seen: set[bytes] = set()

    def emit(v, lip_raw, desc):
        sup = float(np.max(np.abs(v)))
        if sup == 0.0:
            return
        for sign in (1.0, -1.0):
            f = _canon(sign * v / sup)
            key = f.tobytes()
            if key in seen:
                continue
            seen.add(key)
            values.append(f)
            lips.append(lip_raw / sup * (1 + 1e-12))
            prov.append((sign,) + desc)
            if len(values) >= cap:
                return

    for a, b, c in _coefficients(depth):
        if len(values) >= cap:
            break
        rows = np.maximum(a - b * D, c) if D is not None else None
        for y in range(n):
            v = _canon(rows[y] if rows is not None else generator_values(s, a, b, c, y))
            key = v.tobytes()
            if key not in gen_seen and np.any(v != 0):
                gen_seen.add(key)
                if len(gens) < cap:
                    gens.append(v)
                    gen_lip.append(abs(b) / diam)
                    gen_desc.append((a, b, c, y))
            emit(v, abs(b) / diam, ((a, b, c, y),))
            if len(values) >= cap:
                break
    for k in range(2, min(depth, 3) + 1):
        if len(values) >= cap:
            break
        for combo in itertools.combinations(range(len(gens)), k):
            v = gens[combo[0]]
            for j in combo[1:]:
                v = np.maximum(v, gens[j])
            emit(v, max(gen_lip[j] for j in combo), tuple(gen_desc[j] for j in combo))
            if len(values) >= cap:
                break
    vals = np.array(values, dtype=float).reshape(len(values), n)
    vals.setflags(write=False)
    lip = np.array(lips, dtype=float)
    lip.setflags(write=False)
    return TestFamily(s, vals, lip, depth, tuple(prov))


def family_cache_key(s: PointedSpace, depth: int) -> str:
    return hashlib.sha256(f"{s.fingerprint()}:{depth}".encode()).hexdigest()[:24]


def load_or_build_family(s: PointedSpace, depth: int, cache_dir: str | None = None) -> TestFamily:
    """Build the family, reusing an ``.npz`` cache keyed by (space hash, depth)."""
    if cache_dir is None:
        return build_test_family(s, depth)
    path = os.path.join(cache_dir, f"family_{family_cache_key(s, depth)}.npz")
    if os.path.exists(path):
        data = np.load(path)
        vals = data["values"]
        vals.setflags(write=False)
        return TestFamily(s, vals, data["lip"], depth)
    fam = build_test_family(s, depth)
    os.makedirs(cache_dir, exist_ok=True)
    np.savez(path, values=fam.values, lip=fam.lip)
    return fam


# ---------------------------------------------------------------------------
# integrals and the delta metric


def integrate(f, mu) -> float:
    f = np.asarray(f, dtype=float)
    w = as_weight(mu)
    if f.shape != w.shape:
        raise ValueError(f"length mismatch: {f.shape} vs {w.shape}")
    return math.fsum((f * w).tolist())


def _integrals(fam: TestFamily, w: np.ndarray) -> np.ndarray:
    # elementwise product then numpy's pairwise sum: deterministic, no BLAS
    return (fam.values * w[None, :]).sum(axis=1)


def _check_host(fam: TestFamily, *measures):
    for m in measures:
        if isinstance(m, Measure) and m.host is not fam.host and m.host.n != fam.host.n:
            raise ValueError("measure and family live on different hosts")
        if as_weight(m).shape[0] != fam.host.n:
            raise ValueError("measure and family live on different hosts")


def delta_metric(mu, nu, fam: TestFamily, exact: bool = False):
    """``sum_n 2^-n |int f_n d(mu - nu)|`` over the family.

    With ``exact=True`` the sum of the (floating) integral gaps is carried out
    in rational arithmetic and returned as a :class:`~fractions.Fraction`.
    """
    _check_host(fam, mu, nu)
    a = _integrals(fam, as_weight(mu))
    b = _integrals(fam, as_weight(nu))
    if exact:
        return sum((Fraction(1, 1 << (k + 1)) * abs(Fraction(x) - Fraction(y))
                    for k, (x, y) in enumerate(zip(a.tolist(), b.tolist()))), Fraction(0))
    return math.fsum((fam.weights * np.abs(a - b)).tolist())


def delta_matrix(seq, fam: TestFamily) -> np.ndarray:
    """Pairwise delta distances of a sequence (symmetric, zero diagonal)."""
    seq = _as_seq(seq, fam.host)
    I = np.vstack([_integrals(fam, w) for w in seq.weights])
    wts = fam.weights
    m = I.shape[0]
    out = np.zeros((m, m))
    for i in range(m):
        out[i] = (np.abs(I[i][None, :] - I) * wts[None, :]).sum(axis=1)
    return np.minimum(out, out.T)


def is_asymptotically_cauchy(seq, fam: TestFamily, eps_schedule: Sequence[float], min_tail: int = 2) -> Verdict:
    """Eventual Cauchy proxy over the available prefix.

    For each ``eps_k`` find the smallest ``N_k`` with ``delta(mu_i, mu_j) <= eps_k``
    for all ``i, j >= N_k``, where the tail must keep at least ``min_tail``
    elements. Fails at the first ``eps_k`` with no such ``N_k``.
    """
    seq = _as_seq(seq, fam.host)
    m = len(seq)
    if m < 2:
        raise ValueError("need at least two measures")
    D = delta_matrix(seq, fam)
    # tail_max[N] = max delta over pairs i, j >= N
    tail_max = np.zeros(m)
    arg = [(m - 1, m - 1)] * m
    cur, cur_arg = 0.0, (m - 1, m - 1)
    for N in range(m - 1, -1, -1):
        j = N + int(np.argmax(D[N, N:]))
        if D[N, j] > cur:
            cur, cur_arg = float(D[N, j]), (N, j)
        tail_max[N], arg[N] = cur, cur_arg
    last = max(0, m - min_tail)
    witnesses = []
    for eps in eps_schedule:
        ok = np.flatnonzero(tail_max[: last + 1] <= eps)
        if ok.size == 0:
            return Verdict.failed(f"no tail of length >= {min_tail} within {fmt(eps)}", eps=eps,
                                  pair=list(arg[last]), gap=float(tail_max[last]), witnesses=witnesses)
        witnesses.append(int(ok[0]))
    return Verdict.passed(witnesses=witnesses, truncation_error=fam.truncation_error)


# ---------------------------------------------------------------------------
# limits


@dataclass
class PortmanteauRow:
    radius: float
    kind: str
    limit_mass: float
    tail_inf: float
    tail_sup: float
    ok: bool


@dataclass
class LimitReport:
    limit: Measure | None
    verdict: Verdict
    oscillation: np.ndarray
    rows: list[PortmanteauRow] = field(default_factory=list)


def portmanteau_report(seq, limit, tol: float = 1e-9, tail: int | None = None,
                       radii: Iterable[float] | None = None) -> list[PortmanteauRow]:
    """Check ``mu(U) <= liminf mu_i(U)`` on open and ``mu(C) >= limsup mu_i(C)`` on closed base balls.

    liminf and limsup are the min and max over the tail window.
    """
    seq = _as_seq(seq)
    host = seq.host
    lw = as_weight(limit)
    t = tail_length(len(seq), tail)
    W = seq.weights[-t:]
    row = host.row(host.base)
    if radii is None:
        radii = np.unique(row[row > 0])
        radii = np.concatenate([radii, [2 * radii[-1] if radii.size else 1.0]])
    out = []
    for r in radii:
        for kind in (OPEN, CLOSED):
            mask = row < r if kind == OPEN else row <= r
            lm = masked_sum(lw, mask)
            col = W[:, mask].sum(axis=1)
            lo, hi = float(col.min()), float(col.max())
            ok = lm <= lo + tol if kind == OPEN else lm >= hi - tol
            out.append(PortmanteauRow(float(r), kind, lm, lo, hi, bool(ok)))
    return out


def weak_limit(seq, fam: TestFamily | None = None, tol: float = 1e-9, tail: int | None = None) -> LimitReport:
    """Atomwise limit of a sequence if its tail oscillation is within ``tol``.

    The limit is the last element; the report lists the portmanteau
    inequalities on all base-centred balls and, when a family is given, the
    delta distance from the last tail element to the limit.
    """
    seq = _as_seq(seq, fam.host if fam is not None else None)
    t = tail_length(len(seq), tail)
    W = seq.weights[-t:]
    osc = W.max(axis=0) - W.min(axis=0)
    worst = int(np.argmax(osc))
    if osc[worst] > tol:
        return LimitReport(None, Verdict.failed(
            f"atom {worst} oscillates by {fmt(osc[worst])} over the last {t} elements",
            atom=worst, oscillation=float(osc[worst])), osc)
    limit = Measure(seq.host, W[-1])
    rows = portmanteau_report(seq, limit, tol, tail)
    bad = [r for r in rows if not r.ok]
    details = {"tail": t}
    if fam is not None:
        details["delta_first_tail"] = delta_metric(W[0], limit, fam)
    if bad:
        return LimitReport(limit, Verdict.failed(f"portmanteau inequality fails at radius {fmt(bad[0].radius)}",
                                                 **details), osc, rows)
    return LimitReport(limit, Verdict.passed(**details), osc, rows)


# ---------------------------------------------------------------------------
# tightness


@dataclass
class TightnessReport:
    T: np.ndarray
    centers: np.ndarray
    residual: np.ndarray
    limsup: float
    verdict: Verdict

    def __iter__(self):
        return iter((self.T, self.verdict))


def prokhorov_tightness(seq, eps: float, radius: float | None = None, tail: int | None = None) -> TightnessReport:
    """Grow a union ``T`` of open ``radius``-balls around atoms until the tail residual is ``<= eps``.

    Each step adds the atom whose ball leaves the smallest tail-limsup of
    uncovered mass (lowest index on ties). ``residual`` is ``mu_i(X \\ T)`` for every
    element of the sequence.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    seq = _as_seq(seq)
    host = seq.host
    radius = eps if radius is None else radius
    W = seq.weights
    t = tail_length(len(seq), tail)
    Wt = W[-t:]
    atoms = np.flatnonzero(W.max(axis=0) > 0)
    balls = host.block(atoms, np.arange(host.n)) < radius
    covered = np.zeros(host.n, dtype=bool)
    totals = W.sum(axis=1)
    centers: list[int] = []

    def residual_col(mask):
        return np.array([masked_sum(w, ~mask) for w in W])

    res = residual_col(covered)
    limsup = float(res[-t:].max())
    while limsup > eps:
        fresh = balls & ~covered[None, :]
        gain = fresh.astype(float) @ Wt.T  # (atoms, t) newly captured mass
        captured = (Wt @ covered.astype(float))[None, :] + gain
        # tail-limsup of what would remain uncovered
        score = (totals[-t:][None, :] - captured).max(axis=1)
        k = int(np.argmin(score))
        if not fresh[k].any() or gain[k].max() <= 0:
            break
        centers.append(int(atoms[k]))
        covered |= balls[k]
        res = residual_col(covered)
        limsup = float(res[-t:].max())
    T = np.flatnonzero(covered)
    v = (Verdict.passed(cover_size=len(centers)) if limsup <= eps
         else Verdict.failed(f"tail residual {fmt(limsup)} > {fmt(eps)} with all atoms used"))
    return TightnessReport(T, np.array(centers, dtype=np.intp), res, limsup, v)


# ---------------------------------------------------------------------------
# lifting a limit measure to the approximating spaces


@dataclass
class LiftResult:
    measures: list[Measure]
    J: list[np.ndarray]
    representatives: list[dict[int, int]]
    c: list[float]
    entry_stage: list[int | None]
    missing: list[int]
    verdict: Verdict


def lift_measure(approxs: Sequence, target: Measure, atom_order: Sequence[int] | None = None,
                 tol: float = 1e-12) -> LiftResult:
    """Lift a target measure through approximations ``psi_i: X_i -> X_inf``.

    ``approxs`` holds ``(PointMap, R_i, eps_i)`` triples (or objects with
    ``map``, ``R`` and ``eps``). A source point ``x`` in ``B(p_i, R_i)`` is
    labelled by the first target atom ``j`` (in ``atom_order``) with
    ``d(psi_i x, x_j) < eps_i``; the first point carrying label ``j`` represents
    it. The lifted measure puts ``lambda_j / c_i`` on that representative,
    where ``c_i`` is the mass of the represented atoms.
    """
    host = target.host
    lam = target.weight
    atoms = np.flatnonzero(lam > 0) if atom_order is None else np.asarray(atom_order, dtype=np.intp)
    measures, Js, reps, cs = [], [], [], []
    for i, a in enumerate(approxs):
        f, R, eps = (a.map, a.R, a.eps) if hasattr(a, "map") else a
        X = f.src
        if f.dst.n != host.n:
            raise ValueError("approximation target is not the host of the measure")
        xs = np.flatnonzero(X.row(X.base) < R)
        close = host.block(f.img[xs], atoms) < eps
        has = close.any(axis=1)
        label = np.where(has, np.argmax(close, axis=1), -1)
        rep: dict[int, int] = {}
        for x, j in zip(xs.tolist(), label.tolist()):
            if j >= 0 and j not in rep:
                rep[j] = x
        if not rep:
            raise ValueError(f"no representable atoms at stage {i}")
        J = np.array(sorted(rep), dtype=np.intp)
        c = math.fsum(lam[atoms[J]].tolist())
        w = np.zeros(X.n)
        for j in J.tolist():
            w[rep[j]] += lam[atoms[j]] / c
        measures.append(Measure(X, w))
        Js.append(J)
        reps.append({int(atoms[j]): int(x) for j, x in rep.items()})
        cs.append(c)
    stages = len(Js)
    member = np.zeros((stages, atoms.size), dtype=bool)
    for i, J in enumerate(Js):
        member[i, J] = True
    # entry_stage[k]: first stage after which atoms 0..k stay represented
    entry: list[int | None] = []
    for k in range(atoms.size):
        ok = member[:, : k + 1].all(axis=1)
        bad = np.flatnonzero(~ok)
        s = 0 if bad.size == 0 else int(bad[-1]) + 1
        entry.append(s if s < stages else None)
    missing = [int(atoms[k]) for k in range(atoms.size) if not member[-1, k]]
    total = math.fsum(lam[atoms].tolist())
    t = tail_length(stages)
    ctail = np.array(cs[-t:])
    monotone = bool(np.all(np.diff(ctail) >= -tol))
    flags = {"c_tail_nondecreasing": monotone, "c_last": cs[-1], "target_mass": total,
             "missing_atoms": missing}
    if missing or not monotone or cs[-1] < total - tol:
        v = Verdict.unknown("lift does not capture the full target mass on the available stages", **flags)
    else:
        v = Verdict.passed(**flags)
    return LiftResult(measures, Js, reps, cs, entry, missing, v)


def pushforward_gap(fam: TestFamily, f: PointMap, mu, target) -> float:
    """Largest ``|int g d(f_* mu) - int g d(target)|`` over the family."""
    pf = pushforward(mu, f).weight
    return float(np.max(np.abs(_integrals(fam, pf) - _integrals(fam, as_weight(target)))))
