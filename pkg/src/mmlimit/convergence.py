"""Sequence-level diagnostics: bounded finiteness, covering, wpmGH checks, tangents.

Finite prefixes can prove failure (mass-count certificates) but only give
evidence of success, so sequence verdicts carry a ``prefix_limited`` flag.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .approx import eps_grid, search_weak_approximation
from .mmspace import (
    OPEN,
    PointedSpace,
    ball_mass,
    masked_sum,
    normalize_at_basepoint,
    pushforward,
)
from .report import Verdict, fmt
from .weaklimit import TestFamily, _integrals, build_test_family, tail_length

__all__ = [
    "CoverReport",
    "UBFProfile",
    "BMTTBResult",
    "DoublingProfile",
    "TangentResult",
    "uniform_bounded_finiteness",
    "greedy_cover",
    "max_ball_mass",
    "cover_failure_certificate",
    "weak_approx_failure_certificate",
    "bmttb_check",
    "wpmgh_sequence_check",
    "wpmgh_discrepancy",
    "pointwise_doubling_profile",
    "tangent_sequence",
    "cover_csv",
    "doubling_csv",
]

# relative slack that keeps mass-count certificates sound under rounding
_CERT_SLACK = 1e-12


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MMLIMIT_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, workers=None):
    workers = _workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# bounded finiteness


@dataclass
class UBFProfile:
    R: list[float]
    table: np.ndarray  # (spaces, radii) of m_i(B(p_i, R))
    sup: np.ndarray
    tail_limsup: np.ndarray

    def to_dict(self):
        return {"R": self.R, "table": self.table.tolist(), "sup": self.sup.tolist(),
                "tail_limsup": self.tail_limsup.tolist()}


def uniform_bounded_finiteness(seq: Sequence[PointedSpace], R_grid: Sequence[float], kind: str = OPEN,
                               tail: int | None = None) -> UBFProfile:
    """Base-ball masses per space and radius, with their sup and tail-limsup."""
    R_grid = [float(r) for r in R_grid]
    if any(not r > 0 for r in R_grid):
        raise ValueError("radii must be positive")
    table = np.array([[ball_mass(s, s.base, r, kind) for r in R_grid] for s in seq]).reshape(len(seq), len(R_grid))
    t = tail_length(len(seq), tail)
    return UBFProfile(R_grid, table, table.max(axis=0), table[-t:].max(axis=0))


# ---------------------------------------------------------------------------
# covers


@dataclass
class CoverReport:
    centers: np.ndarray
    residual_mass: float
    M: int
    total_mass: float
    trace: list[float] = field(default_factory=list)
    certificate: dict | None = None

    def to_dict(self):
        return {"centers": self.centers.tolist(), "residual_mass": self.residual_mass, "M": self.M,
                "total_mass": self.total_mass, "trace": self.trace, "certificate": self.certificate}


def _cover_setup(s: PointedSpace, R: float, r: float):
    if not (R > 0 and r > 0):
        raise ValueError("R and r must be positive")
    row = s.row(s.base)
    B = np.flatnonzero(row <= R)
    # centers farther than R + r from the base cannot reach the closed ball
    cand = np.flatnonzero(row < R + r)
    mask = s.block(cand, B) < r
    return B, cand, mask


def greedy_cover(s: PointedSpace, R: float, r: float, target_eps: float = 0.0,
                 max_centers: int | None = None) -> CoverReport:
    """Greedily cover the closed ball ``B(p, R)`` by open ``r``-balls.

    Each step adds the center whose ball covers the most uncovered mass of the
    closed ball (lowest index on ties), until the residual is ``<= target_eps``,
    no center makes progress, or ``max_centers`` is reached. Residuals are
    correctly rounded sums of the uncovered weights.
    """
    B, cand, mask = _cover_setup(s, R, r)
    wB = s.weight[B]
    total = math.fsum(wB.tolist())
    unc = np.ones(B.size, dtype=bool)
    maskf = mask.astype(float)
    centers: list[int] = []
    residual = total
    trace = [residual]
    while residual > target_eps and (max_centers is None or len(centers) < max_centers):
        gains = maskf @ np.where(unc, wB, 0.0)
        k = int(np.argmax(gains)) if gains.size else 0
        if not gains.size or gains[k] <= 0:
            break
        centers.append(int(cand[k]))
        unc &= ~mask[k]
        residual = math.fsum(wB[unc].tolist())
        trace.append(residual)
    return CoverReport(np.array(centers, dtype=np.intp), residual, len(centers), total, trace)


def max_ball_mass(s: PointedSpace, R: float, r: float) -> tuple[float, float]:
    """``max_x m(B(p,R) closed intersected with B(x,r) open)`` and ``m(B(p,R))``."""
    B, cand, mask = _cover_setup(s, R, r)
    wB = s.weight[B]
    best = max((math.fsum(wB[row].tolist()) for row in mask), default=0.0)
    return best, math.fsum(wB.tolist())


def cover_failure_certificate(s: PointedSpace, R: float, r: float, M: int, eps: float,
                              payload: bool = False):
    """True when ``M`` open ``r``-balls provably cannot cover ``B(p, R)`` up to mass ``eps``.

    Sound mass count: each ball captures at most ``max_x m(B(p,R) & B(x,r))``.
    """
    best, total = max_ball_mass(s, R, r)
    slack = _CERT_SLACK * max(1.0, total)
    fires = M * best < total - eps - slack
    if payload:
        return fires, {"M": int(M), "max_ball_mass": best, "ball_mass": total, "eps": eps}
    return fires


def weak_approx_failure_certificate(X: PointedSpace, Y: PointedSpace, R: float, eps: float):
    """True when no weak (R, eps)-approximation ``X -> Y`` can exist, by mass count.

    On the good set, points with the same image are within ``eps``, so the good
    set is covered by ``|Y|`` closed ``eps``-balls; if those cannot hold enough
    of ``B(p_X, R)`` the source residual must exceed ``eps``.
    """
    row = X.row(X.base)
    inside = row < R
    total = masked_sum(X.weight, inside)
    idx = np.flatnonzero(inside)
    w = X.weight[idx]
    best = 0.0
    step = max(1, (1 << 22) // max(idx.size, 1))
    for s0 in range(0, idx.size, step):
        close = X.block(idx[s0 : s0 + step], idx) <= eps
        for line in close:
            best = max(best, math.fsum(w[line].tolist()))
    slack = _CERT_SLACK * max(1.0, total)
    fires = Y.n * best < total - eps - slack
    return fires, {"targets": Y.n, "max_ball_mass": best, "ball_mass": total, "eps": eps}


@dataclass
class BMTTBResult:
    params: tuple[float, float, float]
    verdict: Verdict
    asymptotic: Verdict
    M: int
    attempted_M: int
    reports: list[CoverReport]
    prefix_limited: bool = True

    def to_dict(self):
        return {"params": list(self.params), "verdict": self.verdict.to_dict(),
                "asymptotic": self.asymptotic.to_dict(), "M": self.M, "attempted_M": self.attempted_M,
                "prefix_limited": self.prefix_limited,
                "per_space": [{"M": r.M, "residual": r.residual_mass} for r in self.reports]}


def bmttb_check(seq: Sequence[PointedSpace], params: Sequence[tuple[float, float, float]],
                tail: int | None = None, calibration: int | None = None,
                workers: int | None = None) -> list[BMTTBResult]:
    """Uniform covering check for each ``(R, r, eps)``.

    The attempted common ``M`` is the largest greedy count over the first
    ``calibration`` spaces (default: the first half of the prefix). The check
    passes when that ``M`` already brings every space within ``eps``; it is a
    certified failure when the mass-count certificate rules ``M`` out for some
    space, and inconclusive otherwise. The tail-limsup variant is reported
    alongside.
    """
    seq = list(seq)
    if not seq:
        raise ValueError("empty sequence")
    m = len(seq)
    cal = max(1, -(-m // 2)) if calibration is None else max(1, min(int(calibration), m))
    t = tail_length(m, tail)
    out = []
    for R, r, eps in params:
        R, r, eps = float(R), float(r), float(eps)
        if not (R > 0 and r > 0 and eps >= 0):
            raise ValueError("need R, r > 0 and eps >= 0")
        full = _map(lambda s: greedy_cover(s, R, r, eps), seq, workers)
        M_att = max(rep.M for rep in full[:cal])
        capped = [rep if rep.M <= M_att else greedy_cover(s, R, r, eps, max_centers=M_att)
                  for s, rep in zip(seq, full)]
        res = np.array([rep.residual_mass for rep in capped])
        bad = np.flatnonzero(res > eps)
        M_max = max(rep.M for rep in full)
        if bad.size == 0:
            v = Verdict.passed(f"M = {M_att} covers every space", M=M_att)
        else:
            cert = None
            for i in bad:
                fires, pay = cover_failure_certificate(seq[i], R, r, M_att, eps, payload=True)
                if fires:
                    cert = dict(pay, space=int(i))
                    capped[i].certificate = pay
                    break
            if cert is not None:
                v = Verdict.failed(f"no {M_att} balls cover space {cert['space']} up to {fmt(eps)}",
                                   certified=True, certificate=cert, required_M=M_max)
            else:
                v = Verdict.unknown("greedy-fail (inconclusive)", first_space=int(bad[0]), required_M=M_max)
        tail_res = float(res[-t:].max())
        if tail_res <= eps:
            av = Verdict.passed(f"tail-limsup residual {fmt(tail_res)} at M = {M_att}", tail_limsup=tail_res)
        else:
            av = Verdict.failed(f"tail-limsup residual {fmt(tail_res)} > {fmt(eps)} at M = {M_att}",
                                tail_limsup=tail_res)
        out.append(BMTTBResult((R, r, eps), v, av, M_max, M_att, capped))
    return out


# ---------------------------------------------------------------------------
# wpmGH


def _restricted_delta(fam: TestFamily, idx: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    if idx.size == 0:
        return 0.0
    ia = _integrals(fam, a)[idx]
    ib = _integrals(fam, b)[idx]
    return math.fsum((fam.weights[idx] * np.abs(ia - ib)).tolist())


def wpmgh_sequence_check(seq: Sequence[PointedSpace], limit: PointedSpace,
                         schedule: Sequence[tuple[float, float]], fam_depth: int = 3, tol: float = 1e-9,
                         budget: int = 200, seed: int = 0, grid_floor: float = 1e-6,
                         grid_ratio: float = 0.9) -> Verdict:
    """Check weak approximations ``seq[i] -> limit`` along ``schedule`` and the measure gap.

    Stage ``i`` needs a weak ``(R_i, eps_i)``-approximation (searched on a grid
    starting at ``eps_i``). The pushed-forward measure is compared with the
    limit measure over the family functions that vanish outside
    ``B(p, R_i)``; the last gap must be ``<= tol``.
    """
    seq = list(seq)
    schedule = [(float(R), float(e)) for R, e in schedule]
    if len(schedule) != len(seq):
        raise ValueError("schedule length must match the sequence")
    Rs = [R for R, _ in schedule]
    es = [e for _, e in schedule]
    if any(b < a for a, b in zip(Rs, Rs[1:])) or any(b > a for a, b in zip(es, es[1:])):
        raise ValueError("schedule must have R non-decreasing and eps non-increasing")
    fam = build_test_family(limit, fam_depth)
    stages = []
    certified = None
    for i, (X, (R, e)) in enumerate(zip(seq, schedule)):
        res = search_weak_approximation(X, limit, R, budget, seed, grid=eps_grid(e, min(grid_floor, e), grid_ratio))
        ok = res.achieved_eps <= e
        pf = pushforward(X.weight, res.approx.map).weight
        gap = _restricted_delta(fam, fam.restrict_to_ball(R), pf, limit.weight)
        info = {"stage": i, "R": R, "eps": e, "achieved_eps": res.achieved_eps, "delta": gap}
        if not ok:
            fires, pay = weak_approx_failure_certificate(X, limit, R, e)
            info["certificate"] = pay if fires else None
            if fires and certified is None:
                certified = i
        stages.append(info)
    deltas = [s["delta"] for s in stages]
    failing = [s["stage"] for s in stages if s["achieved_eps"] > s["eps"]]
    details = {"stages": stages, "deltas": deltas, "truncation_error": fam.truncation_error}
    if certified is not None:
        return Verdict.failed(f"no weak approximation can exist at stage {certified}", certified=True, **details)
    if failing:
        return Verdict.failed(f"search found no witness at stage {failing[0]}", **details)
    if deltas[-1] > tol:
        return Verdict.failed(f"measure gap {fmt(deltas[-1])} > {fmt(tol)} at the last stage", **details)
    return Verdict.passed(prefix_limited=True, **details)


def wpmgh_discrepancy(X: PointedSpace, Y: PointedSpace, R: float, budget: int = 200, seed: int = 0,
                      fam_depth: int = 3, details: bool = False):
    """Symmetric score: the achieved eps in both directions and both measure gaps."""
    fx = search_weak_approximation(X, Y, R, budget, seed)
    fy = search_weak_approximation(Y, X, R, budget, seed)
    famY = build_test_family(Y, fam_depth)
    famX = build_test_family(X, fam_depth)
    gy = _restricted_delta(famY, np.arange(len(famY)), pushforward(X.weight, fx.approx.map).weight, Y.weight)
    gx = _restricted_delta(famX, np.arange(len(famX)), pushforward(Y.weight, fy.approx.map).weight, X.weight)
    score = max(fx.achieved_eps, fy.achieved_eps, gx, gy)
    if details:
        return score, {"forward_eps": fx.achieved_eps, "backward_eps": fy.achieved_eps,
                       "forward_gap": gy, "backward_gap": gx}
    return score


# ---------------------------------------------------------------------------
# doubling and tangents


@dataclass
class DoublingProfile:
    scales: list[float]
    ratios: list[float]
    summary: float
    infinite_at: list[float]

    def to_dict(self):
        return {"scales": self.scales, "ratios": self.ratios, "summary": self.summary,
                "infinite_at": self.infinite_at}


def pointwise_doubling_profile(s: PointedSpace, point: int, scales: Sequence[float]) -> DoublingProfile:
    """``m(B(x, 2r)) / m(B(x, r))`` per scale; the summary is the max over the smallest quarter of scales."""
    scales = [float(r) for r in scales]
    if any(not r > 0 for r in scales):
        raise ValueError("scales must be positive")
    ratios, flagged = [], []
    for r in scales:
        den = ball_mass(s, point, r, OPEN)
        num = ball_mass(s, point, 2 * r, OPEN)
        if den > 0:
            ratios.append(num / den)
        else:
            ratios.append(math.inf)
            flagged.append(r)
    order = np.argsort(scales, kind="stable")
    q = max(1, -(-len(scales) // 4))
    summary = max(ratios[k] for k in order[:q]) if scales else math.nan
    return DoublingProfile(scales, ratios, float(summary), flagged)


@dataclass
class TangentResult:
    sequence: list[PointedSpace]
    scales: list[float]
    bmttb: list[BMTTBResult]
    doubling: DoublingProfile


def tangent_sequence(s: PointedSpace, point: int, scales: Sequence[float],
                     params: Sequence[tuple[float, float, float]] = ((1.0, 0.25, 0.0),)) -> TangentResult:
    """Rescaled, renormalized copies of ``s`` based at ``point``, with diagnostics."""
    s2 = s.with_base(point)
    seq = [normalize_at_basepoint(s2, r) for r in scales]
    return TangentResult(seq, [float(r) for r in scales], bmttb_check(seq, params),
                         pointwise_doubling_profile(s, point, scales))


# ---------------------------------------------------------------------------
# plot data


def cover_csv(results: Sequence[BMTTBResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["R", "r", "eps", "space", "M", "residual"])
    for res in results:
        R, r, eps = res.params
        for i, rep in enumerate(res.reports):
            for M, resid in enumerate(rep.trace):
                w.writerow([repr(R), repr(r), repr(eps), i, M, repr(resid)])
    return buf.getvalue()


def doubling_csv(profile: DoublingProfile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scale", "ratio"])
    for r, q in zip(profile.scales, profile.ratios):
        w.writerow([repr(r), repr(q)])
    return buf.getvalue()
