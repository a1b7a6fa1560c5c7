"""Strict and weak (R, eps)-approximations between pointed spaces.

A map ``f: X -> Y`` is an (R, eps)-approximation when it fixes the base, has
distortion at most ``eps`` on ``B(p_X, R)`` and its image of that ball is
``eps``-dense in ``B(p_Y, R - eps)``. The weak variant only asks for the
distortion bound on a good set whose complement has small mass, and for
coverage up to small target mass.

Maps are total; points where the definitions say nothing are sent to a far
sentinel (a point outside the relevant ball, or the base if there is none).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mmspace import (
    DenseMetric,
    PointedSpace,
    PointMap,
    ball,
    index_set,
    masked_sum,
    neighborhood,
    support,
)
from .report import Verdict, fmt

__all__ = [
    "WeakApprox",
    "SearchResult",
    "distortion",
    "verify_approximation",
    "quasi_inverse",
    "verify_ball_inclusions",
    "verify_weak_approximation",
    "rough_inverse_weak",
    "search_weak_approximation",
    "eps_grid",
    "glue",
    "far_point",
]


@dataclass(frozen=True, eq=False)
class WeakApprox:
    """A map together with its good set and the parameters ``(R, eps)``."""

    map: PointMap
    good: np.ndarray
    R: float
    eps: float

    def __post_init__(self):
        good = index_set(self.good)
        object.__setattr__(self, "good", good)
        if not 0 < self.eps < self.R:
            raise ValueError(f"need 0 < eps < R, got eps={self.eps}, R={self.R}")
        X = self.map.src
        if X.base not in set(good.tolist()):
            raise ValueError("good set must contain the source base")
        inside = X.row(X.base)[good] < self.R
        if not np.all(inside):
            raise ValueError("good set must lie in the open ball B(p_X, R)")

    @property
    def src(self) -> PointedSpace:
        return self.map.src

    @property
    def dst(self) -> PointedSpace:
        return self.map.dst

    def to_dict(self) -> dict:
        return {"img": self.map.img.tolist(), "good": self.good.tolist(),
                "R": float(self.R), "eps": float(self.eps)}


# ---------------------------------------------------------------------------
# strict approximations


def _distortion_witness(f: PointMap, subset) -> tuple[float, tuple[int, int] | None]:
    sub = np.asarray(subset, dtype=np.intp)
    if sub.size < 2:
        return 0.0, None
    dx = f.src.block(sub, sub)
    im = f.img[sub]
    dy = f.dst.block(im, im)
    err = np.abs(dx - dy)
    k = int(np.argmax(err))
    i, j = divmod(k, sub.size)
    return float(err.flat[k]), (int(sub[i]), int(sub[j]))


def distortion(f: PointMap, subset=None) -> float:
    """``max |d_X(x, y) - d_Y(f x, f y)|`` over pairs in ``subset`` (default: all)."""
    if subset is None:
        subset = np.arange(f.src.n)
    if len(subset) == 0:
        raise ValueError("subset must be nonempty")
    return _distortion_witness(f, subset)[0]


def far_point(s: PointedSpace, radius: float, order=None) -> int:
    """First point (in ``order``) with ``d(p, x) >= radius``, else the base."""
    order = np.arange(s.n) if order is None else np.asarray(order, dtype=np.intp)
    row = s.row(s.base)[order]
    hit = np.flatnonzero(row >= radius)
    return int(order[hit[0]]) if hit.size else s.base


def _check_params(R, eps):
    if not (0 < eps < R):
        raise ValueError(f"need 0 < eps < R, got R={R}, eps={eps}")


def verify_approximation(f: PointMap, R: float, eps: float) -> Verdict:
    """Check the three defining conditions of an (R, eps)-approximation."""
    _check_params(R, eps)
    X, Y = f.src, f.dst
    if not f.preserves_base:
        return Verdict.failed(f"basepoint maps to {int(f.img[X.base])}, not {Y.base}")
    B = ball(X, X.base, R)
    dis, pair = _distortion_witness(f, B)
    if dis > eps:
        return Verdict.failed(f"distortion {fmt(dis)} > {fmt(eps)}", pair=pair, distortion=dis)
    target = ball(Y, Y.base, R - eps)
    covered = neighborhood(Y, np.unique(f.img[B]), eps)
    missing = np.setdiff1d(target, covered)
    if missing.size:
        return Verdict.failed(f"point {int(missing[0])} of B(p_Y, R-eps) is not within eps of the image",
                              missing=missing.tolist())
    return Verdict.passed(distortion=dis)


def _first_within(Y: PointedSpace, cand_img: np.ndarray, targets: np.ndarray, eps: float) -> np.ndarray:
    """For each target, position of the first candidate image within ``eps`` (-1 if none)."""
    out = np.full(targets.size, -1, dtype=np.intp)
    if targets.size == 0 or cand_img.size == 0:
        return out
    close = Y.block(cand_img, targets) < eps
    has = close.any(axis=0)
    out[has] = np.argmax(close[:, has], axis=0)
    return out


def quasi_inverse(f: PointMap, R: float, eps: float, order: Sequence[int] | None = None,
                  check: bool = True) -> PointMap:
    """Quasi-inverse ``phi: Y -> X`` of an (R, eps)-approximation ``f``.

    Each ``y`` in ``B(p_Y, R - eps)`` other than the base goes to the first
    source point of ``B(p_X, R)`` (scanning ``order``) whose image is within
    ``eps`` of ``y``. The base goes to the base, and every other point goes to
    the first point outside ``B(p_X, R - eps)``.

    With ``check`` the result is verified as an (R - eps, 3 eps)-approximation
    and both displacement bounds are asserted.
    """
    _check_params(R, eps)
    if not 4 * eps < R:
        raise ValueError("quasi-inverse needs 4*eps < R")
    pre = verify_approximation(f, R, eps)
    if not pre:
        raise ValueError(f"not an (R, eps)-approximation: {pre.reason}")
    X, Y = f.src, f.dst
    order = np.arange(X.n) if order is None else np.asarray(order, dtype=np.intp)
    if sorted(order.tolist()) != list(range(X.n)):
        raise ValueError("order must be a permutation of the source indices")
    in_ball = X.row(X.base)[order] < R
    cand = order[in_ball]
    far = far_point(X, R - eps, order)
    img = np.full(Y.n, far, dtype=np.intp)
    ys = ball(Y, Y.base, R - eps)
    ys = ys[ys != Y.base]
    pos = _first_within(Y, f.img[cand], ys, eps)
    if np.any(pos < 0):
        raise AssertionError("a target point has no source within eps")
    img[ys] = cand[pos]
    img[Y.base] = X.base
    phi = PointMap(Y, X, img)
    if check:
        _assert_quasi_inverse(f, phi, R, eps)
    return phi


def displacement_bounds(f: PointMap, phi: PointMap, R: float, eps: float,
                        good_x=None, good_y=None) -> tuple[float, float]:
    """Largest ``d(x, phi f x)`` on ``B(p_X, R-4eps)`` and ``d(y, f phi y)`` on ``B(p_Y, R-eps)``.

    Optional good sets restrict both balls (the weak version of the bounds).
    """
    X, Y = f.src, f.dst
    bx = ball(X, X.base, R - 4 * eps) if R > 4 * eps else np.empty(0, np.intp)
    by = ball(Y, Y.base, R - eps)
    if good_x is not None:
        bx = np.intersect1d(bx, good_x)
    if good_y is not None:
        by = np.intersect1d(by, good_y)
    back = phi.img[f.img[bx]]
    dx = X.block(bx, back).diagonal() if bx.size else np.zeros(0)
    fwd = f.img[phi.img[by]]
    dy = Y.block(by, fwd).diagonal() if by.size else np.zeros(0)
    return (float(dx.max()) if dx.size else 0.0, float(dy.max()) if dy.size else 0.0)


def _assert_quasi_inverse(f, phi, R, eps):
    v = verify_approximation(phi, R - eps, 3 * eps)
    if not v:
        raise AssertionError(f"quasi-inverse is not an (R-eps, 3eps)-approximation: {v.reason}")
    d1, d2 = displacement_bounds(f, phi, R, eps)
    if not (d1 < 3 * eps and d2 < 3 * eps):
        raise AssertionError(f"displacement bound violated: {d1}, {d2} vs {3 * eps}")


def verify_ball_inclusions(f: PointMap, phi: PointMap, R: float, r: float, r_prime: float,
                           eps: float) -> Verdict:
    """Check both ball inclusions relating ``f`` and its quasi-inverse.

    For every ``y`` in ``B(p_Y, r')``:

    * ``B(y, r - 3eps)`` lies in the ``3eps``-neighbourhood of ``f(B(phi y, r))``;
    * ``f^{-1}(B(y, r - 3eps))`` lies in ``B(phi y, r + 4eps)``.

    The preimage is taken over all of ``X``, so it relies on ``f`` sending
    points outside ``B(p_X, R)`` outside ``B(p_Y, R)``.
    """
    if not (r + r_prime < R - 3 * eps and r > 3 * eps and eps > 0):
        raise ValueError("need r + r' < R - 3 eps and r > 3 eps")
    X, Y = f.src, f.dst
    for y in ball(Y, Y.base, r_prime):
        c = int(phi.img[y])
        inner = ball(Y, y, r - 3 * eps)
        cover = neighborhood(Y, np.unique(f.img[ball(X, c, r)]), 3 * eps)
        miss = np.setdiff1d(inner, cover)
        if miss.size:
            return Verdict.failed(f"first inclusion fails at y={int(y)}", y=int(y), point=int(miss[0]))
        inner_mask = np.zeros(Y.n, dtype=bool)
        inner_mask[inner] = True
        pre = np.flatnonzero(inner_mask[f.img])
        far = pre[X.row(c)[pre] >= r + 4 * eps]
        if far.size:
            return Verdict.failed(f"second inclusion fails at y={int(y)}", y=int(y), point=int(far[0]))
    return Verdict.passed()


# ---------------------------------------------------------------------------
# weak approximations


def _weak_parts(w: WeakApprox):
    """Distortion witness and the two residual masses of a weak approximation."""
    X, Y = w.src, w.dst
    dis, pair = _distortion_witness(w.map, w.good)
    bx = X.row(X.base) < w.R
    bx[w.good] = False
    res_x = masked_sum(X.weight, bx)
    by = Y.row(Y.base) < w.R - w.eps
    cov = neighborhood(Y, np.unique(w.map.img[w.good]), w.eps)
    by[cov] = False
    res_y = masked_sum(Y.weight, by)
    return dis, pair, res_x, res_y


def verify_weak_approximation(w: WeakApprox) -> Verdict:
    """Check the basepoint, distortion-on-good-set and both residual mass bounds."""
    f = w.map
    if not f.preserves_base:
        return Verdict.failed(f"basepoint maps to {int(f.img[w.src.base])}, not {w.dst.base}")
    dis, pair, res_x, res_y = _weak_parts(w)
    details = dict(distortion=dis, source_residual=res_x, target_residual=res_y)
    if dis > w.eps:
        return Verdict.failed(f"distortion {fmt(dis)} > {fmt(w.eps)}", pair=pair, **details)
    if res_x > w.eps:
        return Verdict.failed(f"source residual mass {fmt(res_x)} > {fmt(w.eps)}", **details)
    if res_y > w.eps:
        return Verdict.failed(f"target residual mass {fmt(res_y)} > {fmt(w.eps)}", **details)
    return Verdict.passed(**details)


def rough_inverse_weak(w: WeakApprox, order: Sequence[int] | None = None, check: bool = True) -> WeakApprox:
    """Rough inverse of a weak (R, eps)-approximation, a weak (R - eps, 3 eps) one.

    The new good set is ``f(good)^eps`` intersected with ``B(p_Y, R - eps)``.
    Each of its points other than the base goes to the first good point (in
    ``order``) whose image is within ``eps``; everything else goes to the first
    point outside ``B(p_X, R)``.
    """
    R, eps = w.R, w.eps
    if not 4 * eps < R:
        raise ValueError("rough inverse needs 4*eps < R")
    pre = verify_weak_approximation(w)
    if not pre:
        raise ValueError(f"not a weak (R, eps)-approximation: {pre.reason}")
    X, Y = w.src, w.dst
    order = np.arange(X.n) if order is None else np.asarray(order, dtype=np.intp)
    good_mask = np.zeros(X.n, dtype=bool)
    good_mask[w.good] = True
    cand = order[good_mask[order]]
    y_good = np.intersect1d(neighborhood(Y, np.unique(w.map.img[w.good]), eps), ball(Y, Y.base, R - eps))
    x0 = far_point(X, R, order)
    img = np.full(Y.n, x0, dtype=np.intp)
    ys = y_good[y_good != Y.base]
    pos = _first_within(Y, w.map.img[cand], ys, eps)
    if np.any(pos < 0):
        raise AssertionError("a good target point has no good source within eps")
    img[ys] = cand[pos]
    img[Y.base] = X.base
    phi = PointMap(Y, X, img)
    out = WeakApprox(phi, y_good, R - eps, 3 * eps)
    if check:
        v = verify_weak_approximation(out)
        if not v:
            raise AssertionError(f"rough inverse fails verification: {v.reason}")
        d1, d2 = displacement_bounds(w.map, phi, R, eps, good_x=w.good, good_y=y_good)
        if not (d1 < 3 * eps and d2 < 3 * eps):
            raise AssertionError(f"displacement bound violated: {d1}, {d2} vs {3 * eps}")
    return out


# ---------------------------------------------------------------------------
# search


@dataclass
class SearchResult:
    approx: WeakApprox
    achieved_eps: float
    verdict: Verdict
    evaluated: int = 0
    accepted_swaps: int = 0
    grid: list[float] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (approx, achieved_eps)
        return iter((self.approx, self.achieved_eps))

    @property
    def found(self) -> bool:
        return math.isfinite(self.achieved_eps)

    def to_dict(self) -> dict:
        return {"approx": self.approx.to_dict(), "achieved_eps": self.achieved_eps,
                "verdict": self.verdict.to_dict(), "evaluated": self.evaluated,
                "accepted_swaps": self.accepted_swaps}


def eps_grid(start: float, floor: float = 1e-6, ratio: float = 0.9) -> list[float]:
    """Descending geometric grid ``start, start*ratio, ...`` down to ``floor``."""
    if not (0 < ratio < 1) or not floor > 0:
        raise ValueError("need 0 < ratio < 1 and floor > 0")
    out = []
    e = float(start)
    while e >= floor:
        out.append(e)
        e *= ratio
    if not out or out[-1] > floor:
        out.append(float(floor))
    return out


def farthest_point_net(s: PointedSpace, cand: np.ndarray, scale: float) -> np.ndarray:
    """Farthest-point traversal of ``cand`` from the base until the covering radius is ``<= scale``.

    Consecutive picks are more than ``scale`` apart from all earlier ones; ties
    go to the lowest index.
    """
    cand = np.asarray(cand, dtype=np.intp)
    net = [s.base]
    if cand.size == 0:
        return np.array(net, dtype=np.intp)
    gap = s.block(np.array([s.base]), cand)[0].copy()
    while True:
        k = int(np.argmax(gap))
        if gap[k] <= scale:
            break
        net.append(int(cand[k]))
        np.minimum(gap, s.block(np.array([cand[k]]), cand)[0], out=gap)
    return np.array(net, dtype=np.intp)


class _Candidate:
    """Evaluates representative assignments for one net and one eps."""

    def __init__(self, X, Y, R, eps, net, piece, reps_pool, x_ball, y_inner, far):
        self.X, self.Y, self.R, self.eps = X, Y, R, eps
        self.net, self.piece, self.pool = net, piece, reps_pool
        self.x_ball = x_ball
        self.y_inner = y_inner
        self.far = far
        # distances from every source ball point to every pool point
        self.d_ball_pool = X.block(x_ball, reps_pool)
        self.dy_full = Y.block(net, np.arange(Y.n))

    def build(self, g: np.ndarray):
        """Map, good set and used net positions for pool positions ``g``."""
        d = self.d_ball_pool[:, g]
        first = np.argmin(d, axis=1)
        has = d[np.arange(d.shape[0]), first] < self.piece
        first = first[has]
        img = np.full(self.X.n, self.far, dtype=np.intp)
        good = self.x_ball[has]
        img[good] = self.net[first]
        img[self.X.base] = self.Y.base
        return img, good, np.unique(first)

    def score(self, g: np.ndarray):
        img, good, used = self.build(g)
        X, Y = self.X, self.Y
        if good.size > 1:
            dis = float(np.abs(X.block(good, good) - Y.block(img[good], img[good])).max())
        else:
            dis = 0.0
        bx = np.zeros(X.n, dtype=bool)
        bx[self.x_ball] = True
        bx[good] = False
        res_x = masked_sum(X.weight, bx)
        by = np.zeros(Y.n, dtype=bool)
        by[self.y_inner] = True
        if used.size:
            by &= ~(self.dy_full[used] < self.eps).any(axis=0)
        res_y = masked_sum(Y.weight, by)
        return max(dis, res_x, res_y), img, good


def _greedy_assign(dx_pool, dy_net, pool_base: int) -> np.ndarray:
    """Assign each net point a pool point matching its distance profile to earlier picks."""
    m = dy_net.shape[0]
    g = np.empty(m, dtype=np.intp)
    g[0] = pool_base
    for a in range(1, m):
        cost = np.abs(dx_pool[:, g[:a]] - dy_net[a, :a][None, :]).max(axis=1)
        g[a] = int(np.argmin(cost))
    return g


def search_weak_approximation(
    X: PointedSpace,
    Y: PointedSpace,
    R: float,
    budget: int = 10_000,
    seed: int = 0,
    grid: Sequence[float] | None = None,
    net_ratio: float = 1.0 / 6.0,
    trace: Callable[[dict], None] | None = None,
) -> SearchResult:
    """Search a descending eps grid for a verified weak (R, eps)-approximation ``X -> Y``.

    For each grid value the target ball ``B(p_Y, R)`` (restricted to the
    support) gets a farthest-point net at scale ``net_ratio * eps``. Net points
    receive source representatives, first by greedy distance-profile matching
    and then by seeded random swaps and reassignments (at most ``budget``
    attempts per distinct net). Source points go to the net point of their
    nearest representative (lowest position on ties) when it is closer than
    ``eps / 2``; the good set is the union of those balls. Every candidate is
    scored exactly, so the capture radius only affects what is found.

    Returns the smallest passing grid value with its witness, or the best
    witness found with ``achieved_eps = inf``.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    if grid is None:
        start = max(X.diameter, Y.diameter, 1e-6)
        start = min(start, math.nextafter(R, 0.0))
        grid = eps_grid(start)
    grid = [float(e) for e in grid if 0 < e < R]
    if not grid:
        raise ValueError("empty eps grid below R")
    rng_root = int(seed)
    x_ball = np.flatnonzero(X.row(X.base) < R)
    pool = x_ball
    pool_base = int(np.flatnonzero(pool == X.base)[0])
    dx_pool = X.block(pool, pool)
    y_cand = np.intersect1d(ball(Y, Y.base, R), support(Y))
    far = far_point(X, R)
    cache: dict[bytes, dict] = {}
    best = None
    evaluated = 0
    swaps = 0
    passing = None
    for k, eps in enumerate(grid):
        scale = net_ratio * eps
        net = farthest_point_net(Y, y_cand, scale)
        key = net.tobytes()
        entry = cache.get(key)
        if entry is None:
            dy_net = Y.block(net, net)
            entry = {"g": _greedy_assign(dx_pool, dy_net, pool_base), "spent": 0,
                     "dy_net": dy_net, "rng": np.random.default_rng([rng_root, len(cache)])}
            cache[key] = entry
        y_inner = np.flatnonzero(Y.row(Y.base) < R - eps)
        cand = _Candidate(X, Y, R, eps, net, eps / 2, pool, x_ball, y_inner, far)
        score, img, good = cand.score(entry["g"])
        evaluated += 1
        m = net.size
        rng = entry["rng"]
        while score > eps and entry["spent"] < budget and m > 1:
            entry["spent"] += 1
            g2 = entry["g"].copy()
            a = int(rng.integers(1, m))
            if m > 2 and rng.random() < 0.5:
                b = int(rng.integers(1, m))
                g2[a], g2[b] = g2[b], g2[a]
                move = ["swap", int(net[a]), int(net[b])]
            else:
                g2[a] = int(rng.integers(0, pool.size))
                move = ["assign", int(net[a]), int(pool[g2[a]])]
            s2, img2, good2 = cand.score(g2)
            evaluated += 1
            if s2 < score:
                entry["g"], score, img, good = g2, s2, img2, good2
                swaps += 1
                if trace is not None:
                    trace({"eps": eps, "move": move, "score": s2})
        w = WeakApprox(PointMap(X, Y, img), good, R, eps)
        if best is None or score - eps < best[0]:
            best = (score - eps, w)
        if score <= eps:
            v = verify_weak_approximation(w)
            if v:
                passing = (eps, w, v)
    if passing is not None:
        eps, w, v = passing
        return SearchResult(w, eps, v, evaluated, swaps, list(grid))
    w = best[1]
    return SearchResult(w, math.inf, verify_weak_approximation(w), evaluated, swaps, list(grid))


# ---------------------------------------------------------------------------
# gluing


def glue(X: PointedSpace, Y: PointedSpace, w: WeakApprox):
    """Disjoint union of ``X`` and ``Y`` with cross distances through the good set.

    ``d(x, y) = min over good g of d_X(g, x) + d_Y(f g, y) + eps``. Weights of
    both parts are kept, so the total mass is the sum of the two masses.
    Returns the glued space and the two isometric embeddings.
    """
    if w.src is not X or w.dst is not Y:
        if w.src.n != X.n or w.dst.n != Y.n:
            raise ValueError("approximation does not connect X and Y")
    v = verify_weak_approximation(w)
    if not v:
        raise ValueError(f"not a verified weak approximation: {v.reason}")
    good = w.good
    dxg = X.block(good, np.arange(X.n))
    dyg = Y.block(w.map.img[good], np.arange(Y.n))
    cross = np.full((X.n, Y.n), np.inf)
    for k in range(good.size):
        np.minimum(cross, dxg[k][:, None] + dyg[k][None, :], out=cross)
    cross += w.eps
    n = X.n + Y.n
    d = np.empty((n, n))
    d[: X.n, : X.n] = X.dist
    d[X.n :, X.n :] = Y.dist
    d[: X.n, X.n :] = cross
    d[X.n :, : X.n] = cross.T
    labels = [f"X:{i}" for i in range(X.n)] + [f"Y:{j}" for j in range(Y.n)]
    G = PointedSpace(DenseMetric(d), np.concatenate([X.weight, Y.weight]), X.base, tuple(labels))
    ex = PointMap(X, G, np.arange(X.n))
    ey = PointMap(Y, G, X.n + np.arange(Y.n))
    return G, ex, ey


def weak_from_doc(doc: dict, X: PointedSpace, Y: PointedSpace) -> WeakApprox:
    return WeakApprox(PointMap(X, Y, doc["img"]), doc["good"], float(doc["R"]), float(doc["eps"]))


def weak_to_json(w: WeakApprox) -> str:
    return json.dumps(w.to_dict(), sort_keys=True)
