"""Finite pointed metric measure spaces and their primitive operations.

A space is a finite point set with a distance, nonnegative atomic weights and a
distinguished base index. Distances come from a :class:`Metric` backend so that
structured examples (line grids, scaled basis vectors in l-infinity) never need
a dense ``n x n`` matrix unless a caller asks for one.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Metric",
    "DenseMetric",
    "LineMetric",
    "BasisMetric",
    "UniformMetric",
    "ScaledMetric",
    "SubsetMetric",
    "PointedSpace",
    "Measure",
    "PointMap",
    "ValidationReport",
    "Violation",
    "index_set",
    "validate_space",
    "support",
    "ball",
    "neighborhood",
    "ball_mass",
    "rescale",
    "normalize_at_basepoint",
    "restrict",
    "pushforward",
    "compose",
    "identity_map",
    "masked_sum",
]

OPEN = "open"
CLOSED = "closed"

# rows per block when scanning large spaces
_CHUNK = 1 << 22


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def index_set(items: Iterable[int] | np.ndarray) -> np.ndarray:
    """Sorted array of distinct indices."""
    return np.unique(np.asarray(list(items) if not isinstance(items, np.ndarray) else items, dtype=np.intp))


def masked_sum(weight: np.ndarray, idx) -> float:
    """Correctly rounded sum of ``weight[idx]``."""
    return math.fsum(np.asarray(weight)[idx].tolist())


# ---------------------------------------------------------------------------
# metric backends


class Metric:
    """Distance oracle on ``n`` points.

    Subclasses implement :meth:`block`; everything else derives from it.
    """

    n: int

    def block(self, rows, cols) -> np.ndarray:
        raise NotImplementedError

    def row(self, i: int) -> np.ndarray:
        return self.block(np.array([i]), slice(None))[0]

    def dense(self) -> np.ndarray:
        return self.block(slice(None), slice(None))

    def chunks(self, idx: np.ndarray | None = None):
        """Yield ``(rows, block)`` pairs covering ``idx x all`` in row chunks."""
        idx = np.arange(self.n) if idx is None else np.asarray(idx)
        step = max(1, _CHUNK // max(self.n, 1))
        for s in range(0, len(idx), step):
            rows = idx[s : s + step]
            yield rows, self.block(rows, slice(None))

    def diameter(self) -> float:
        best = 0.0
        for _, b in self.chunks():
            if b.size:
                best = max(best, float(b.max()))
        return best

    def to_doc(self):
        return self.dense().tolist()

    def fingerprint(self) -> bytes:
        return np.ascontiguousarray(self.dense()).tobytes()


class DenseMetric(Metric):
    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("distance matrix must be square")
        self.matrix = _frozen(m)
        self.n = m.shape[0]

    def block(self, rows, cols):
        m = self.matrix[rows]
        return m[:, cols]

    def dense(self):
        return self.matrix

    def diameter(self):
        return float(self.matrix.max()) if self.n else 0.0


class LineMetric(Metric):
    """``|x_i - x_j|`` for coordinates on the real line."""

    def __init__(self, coords):
        self.coords = _frozen(np.asarray(coords, dtype=float).ravel())
        self.n = len(self.coords)

    def block(self, rows, cols):
        return np.abs(self.coords[rows][:, None] - self.coords[cols][None, :])

    def diameter(self):
        return float(self.coords.max() - self.coords.min()) if self.n else 0.0

    def to_doc(self):
        return {"generator": "line_grid", "params": {"coords": self.coords.tolist()}}

    def fingerprint(self):
        return b"line" + self.coords.tobytes()


class BasisMetric(Metric):
    """l-infinity distance between points ``e_j / k`` (and the origin).

    Point ``i`` is ``e_{ray[i]} / scale[i]``; ``scale[i] == 0`` encodes the
    origin. Distances are evaluated symbolically: ``max(1/k, 1/k')`` across
    different rays and ``|1/k - 1/k'|`` on the same ray.
    """

    def __init__(self, ray, scale):
        ray = np.asarray(ray, dtype=np.int64).ravel()
        scale = np.asarray(scale, dtype=np.int64).ravel()
        if ray.shape != scale.shape:
            raise ValueError("ray and scale must have equal length")
        if np.any(scale < 0):
            raise ValueError("scale must be nonnegative")
        ray = np.where(scale == 0, -1, ray)
        self.ray = _frozen(ray, np.int64)
        self.scale = _frozen(scale, np.int64)
        inv = np.zeros(len(scale))
        nz = scale > 0
        inv[nz] = 1.0 / scale[nz]
        self.inv = _frozen(inv)
        self.n = len(ray)

    def block(self, rows, cols):
        a, b = self.inv[rows][:, None], self.inv[cols][None, :]
        out = np.maximum(a, b)
        same = self.ray[rows][:, None] == self.ray[cols][None, :]
        diff = np.subtract(a, b)
        np.abs(diff, out=diff)
        np.copyto(out, diff, where=same)
        return out

    def diameter(self):
        if self.n < 2:
            return 0.0
        best = 0.0
        if len(np.unique(self.ray)) > 1:
            best = float(self.inv.max())
        for r in np.unique(self.ray):
            v = self.inv[self.ray == r]
            best = max(best, float(v.max() - v.min()))
        return best

    def to_doc(self):
        return {
            "generator": "linf_scaled_basis",
            "params": {"ray": self.ray.tolist(), "scale": self.scale.tolist()},
        }

    def fingerprint(self):
        return b"basis" + self.ray.tobytes() + self.scale.tobytes()


class UniformMetric(Metric):
    """All distinct points at the same distance ``value``."""

    def __init__(self, n: int, value: float = 1.0):
        if value <= 0:
            raise ValueError("value must be positive")
        self.n = int(n)
        self.value = float(value)

    def block(self, rows, cols):
        r = np.arange(self.n)[rows]
        c = np.arange(self.n)[cols]
        return np.where(r[:, None] == c[None, :], 0.0, self.value)

    def diameter(self):
        return self.value if self.n > 1 else 0.0

    def to_doc(self):
        return {"generator": "uniform", "params": {"n": self.n, "value": self.value}}

    def fingerprint(self):
        return b"uniform" + np.array([self.n, self.value]).tobytes()


class ScaledMetric(Metric):
    """``inner / factor``; the division is applied to each evaluated entry."""

    def __init__(self, inner: Metric, factor: float):
        if not factor > 0:
            raise ValueError("scale must be positive")
        self.inner = inner
        self.factor = float(factor)
        self.n = inner.n

    def block(self, rows, cols):
        return self.inner.block(rows, cols) / self.factor

    def diameter(self):
        return self.inner.diameter() / self.factor

    def to_doc(self):
        return {"generator": "scaled", "params": {"inner": self.inner.to_doc(), "factor": self.factor}}

    def fingerprint(self):
        return b"scaled" + np.array([self.factor]).tobytes() + self.inner.fingerprint()


class SubsetMetric(Metric):
    """Restriction of ``inner`` to the points ``index``."""

    def __init__(self, inner: Metric, index):
        self.inner = inner
        self.index = _frozen(np.asarray(index, dtype=np.intp), np.intp)
        self.n = len(self.index)

    def block(self, rows, cols):
        return self.inner.block(self.index[rows], self.index[cols])

    def to_doc(self):
        return {"generator": "subset", "params": {"inner": self.inner.to_doc(), "index": self.index.tolist()}}

    def fingerprint(self):
        return b"subset" + self.index.tobytes() + self.inner.fingerprint()


# ---------------------------------------------------------------------------
# spaces, measures, maps


@dataclass(frozen=True, eq=False)
class PointedSpace:
    """Finite pointed metric measure space ``(X, d, m, p)``."""

    metric: Metric
    weight: np.ndarray
    base: int = 0
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        w = _frozen(np.asarray(self.weight, dtype=float).ravel())
        if w.shape[0] != self.metric.n:
            raise ValueError(f"weight has length {w.shape[0]}, expected {self.metric.n}")
        if self.metric.n == 0:
            raise ValueError("space must have at least one point")
        if not 0 <= int(self.base) < self.metric.n:
            raise ValueError(f"base {self.base} out of range")
        if self.labels is not None and len(self.labels) != self.metric.n:
            raise ValueError("labels length mismatch")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "base", int(self.base))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @classmethod
    def from_matrix(cls, dist, weight, base: int = 0, labels=None) -> "PointedSpace":
        return cls(DenseMetric(dist), weight, base, labels)

    @property
    def n(self) -> int:
        return self.metric.n

    @cached_property
    def dist(self) -> np.ndarray:
        """Dense distance matrix (materialized on first access)."""
        d = np.asarray(self.metric.dense(), dtype=float)
        if d.flags.writeable:
            d = d.copy()
            d.setflags(write=False)
        return d

    def row(self, i: int) -> np.ndarray:
        if "dist" in self.__dict__:
            return self.dist[i]
        return self.metric.row(i)

    def block(self, rows, cols) -> np.ndarray:
        if "dist" in self.__dict__:
            return self.dist[rows][:, cols]
        return self.metric.block(rows, cols)

    @cached_property
    def diameter(self) -> float:
        return self.metric.diameter()

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weight.tolist())

    def with_base(self, base: int) -> "PointedSpace":
        return PointedSpace(self.metric, self.weight, base, self.labels)

    def with_weight(self, weight) -> "PointedSpace":
        return PointedSpace(self.metric, weight, self.base, self.labels)

    def measure(self) -> "Measure":
        return Measure(self, self.weight)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.metric.fingerprint())
        h.update(self.weight.tobytes())
        h.update(np.int64(self.base).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class Measure:
    """Atomic measure on the points of ``host``."""

    host: PointedSpace
    weight: np.ndarray

    def __post_init__(self):
        w = _frozen(np.asarray(self.weight, dtype=float).ravel())
        if w.shape[0] != self.host.n:
            raise ValueError(f"measure has length {w.shape[0]}, host has {self.host.n} points")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("measure weights must be finite and nonnegative")
        object.__setattr__(self, "weight", w)

    @property
    def total(self) -> float:
        return math.fsum(self.weight.tolist())


@dataclass(frozen=True, eq=False)
class PointMap:
    """Total map between point sets, stored as an image index per source point."""

    src: PointedSpace
    dst: PointedSpace
    img: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.img, dtype=np.intp).ravel()
        if img.shape[0] != self.src.n:
            raise ValueError(f"map has length {img.shape[0]}, source has {self.src.n} points")
        if img.size and (img.min() < 0 or img.max() >= self.dst.n):
            raise ValueError("map image out of range")
        img = img.copy()
        img.setflags(write=False)
        object.__setattr__(self, "img", img)

    def __call__(self, i):
        return self.img[i]

    @property
    def preserves_base(self) -> bool:
        return int(self.img[self.src.base]) == self.dst.base


def identity_map(s: PointedSpace) -> PointMap:
    return PointMap(s, s, np.arange(s.n))


def compose(f: PointMap, g: PointMap) -> PointMap:
    """``g o f`` (apply ``f`` first)."""
    if f.dst.n != g.src.n:
        raise ValueError("maps are not composable")
    return PointMap(f.src, g.dst, g.img[f.img])


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str
    indices: tuple[int, ...]
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]


def validate_space(s: PointedSpace, limit: int | None = None) -> ValidationReport:
    """Check the metric and measure axioms; report every offending index pair.

    The triangle inequality is checked with tolerance ``1e-9 * max(dist)``.
    ``limit`` caps the number of reported violations per kind.
    """
    rep = ValidationReport()
    d = s.dist
    n = s.n

    def add(kind, idx, msg):
        if limit is None or sum(v.kind == kind for v in rep.violations) < limit:
            rep.violations.append(Violation(kind, tuple(int(i) for i in idx), msg))

    if not np.all(np.isfinite(d)):
        for i, j in np.argwhere(~np.isfinite(d)):
            add("finite", (i, j), f"non-finite distance at ({i},{j})")
        return rep
    for i in np.flatnonzero(np.diag(d) != 0):
        add("diagonal", (i, i), f"nonzero self-distance at ({i},{i})")
    iu, ju = np.triu_indices(n, 1)
    for i, j in zip(iu[d[iu, ju] != d[ju, iu]], ju[d[iu, ju] != d[ju, iu]]):
        add("symmetry", (i, j), f"symmetry violated at ({i},{j})")
    for i, j in zip(iu[d[iu, ju] <= 0], ju[d[iu, ju] <= 0]):
        add("positivity", (i, j), f"positivity violated at ({i},{j})")
    tau = 1e-9 * float(d.max()) if n else 0.0
    bad = np.zeros((n, n), dtype=bool)
    for j in range(n):
        bad |= d[:, j][:, None] + d[j][None, :] + tau < d
    for i, k in zip(*np.nonzero(np.triu(bad, 1))):
        add("triangle", (i, k), f"triangle violated at ({i},{k})")
    w = s.weight
    for i in np.flatnonzero(~np.isfinite(w) | (w < 0)):
        add("weight", (i,), f"negative or non-finite weight at {i}")
    return rep


# ---------------------------------------------------------------------------
# balls and measures


def _check_radius(r):
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")


def support(s: PointedSpace | Measure) -> np.ndarray:
    """Indices of positive-weight atoms."""
    return np.flatnonzero(s.weight > 0)


def ball(s: PointedSpace, c: int, r: float, kind: str = OPEN) -> np.ndarray:
    """Open (``d < r``) or closed (``d <= r``) ball; comparisons are exact."""
    _check_radius(r)
    row = s.row(c)
    if kind == OPEN:
        return np.flatnonzero(row < r)
    if kind == CLOSED:
        return np.flatnonzero(row <= r)
    raise ValueError(f"unknown ball kind {kind!r}")


def ball_mask(s: PointedSpace, c: int, r: float, kind: str = OPEN) -> np.ndarray:
    _check_radius(r)
    row = s.row(c)
    return row < r if kind == OPEN else row <= r


def neighborhood(s: PointedSpace, a, r: float) -> np.ndarray:
    """Points at distance ``< r`` from the set ``a`` (empty if ``a`` is)."""
    _check_radius(r)
    a = np.asarray(a, dtype=np.intp)
    if a.size == 0:
        return a[:0]
    hit = np.zeros(s.n, dtype=bool)
    for rows, b in s.metric.chunks(a) if "dist" not in s.__dict__ else [(a, s.dist[a])]:
        hit |= (b < r).any(axis=0)
    return np.flatnonzero(hit)


def ball_mass(s: PointedSpace, c: int, r: float, kind: str = OPEN, weight=None) -> float:
    w = s.weight if weight is None else np.asarray(weight)
    return masked_sum(w, ball_mask(s, c, r, kind))


def rescale(s: PointedSpace, r: float) -> PointedSpace:
    """Same points and weights with distances divided by ``r``."""
    _check_radius(r)
    if r == 1:
        return s
    return PointedSpace(ScaledMetric(s.metric, r), s.weight, s.base, s.labels)


def normalize_at_basepoint(s: PointedSpace, r: float) -> PointedSpace:
    """Divide distances by ``r`` and weights by the mass of ``B(p, r)``."""
    mass = ball_mass(s, s.base, r, OPEN)
    if mass <= 0:
        raise ValueError("basepoint not in support at scale r")
    return PointedSpace(ScaledMetric(s.metric, r), s.weight / mass, s.base, s.labels)


def restrict(s: PointedSpace, a, new_base: int | None = None) -> PointedSpace:
    """Induced subspace on ``a``; ``new_base`` is an index of ``s`` inside ``a``."""
    a = index_set(a)
    if a.size == 0:
        raise ValueError("cannot restrict to an empty set")
    new_base = s.base if new_base is None else int(new_base)
    pos = np.searchsorted(a, new_base)
    if pos >= a.size or a[pos] != new_base:
        raise ValueError("base not in restriction set")
    if "dist" in s.__dict__ or isinstance(s.metric, DenseMetric):
        metric: Metric = DenseMetric(s.dist[np.ix_(a, a)])
    else:
        metric = SubsetMetric(s.metric, a)
    labels = None if s.labels is None else tuple(s.labels[i] for i in a)
    return PointedSpace(metric, s.weight[a], int(pos), labels)


def pushforward(mu: Measure | np.ndarray, f: PointMap) -> Measure:
    """Image measure: atoms with the same image are summed in index order."""
    w = mu.weight if isinstance(mu, Measure) else np.asarray(mu, dtype=float)
    if w.shape[0] != f.src.n:
        raise ValueError("measure does not live on the map's source")
    return Measure(f.dst, np.bincount(f.img, weights=w, minlength=f.dst.n))


def as_weight(mu, n: int | None = None) -> np.ndarray:
    w = mu.weight if isinstance(mu, (Measure, PointedSpace)) else np.asarray(mu, dtype=float)
    if n is not None and w.shape[0] != n:
        raise ValueError("length mismatch")
    return w


def seq_weights(measures: Sequence) -> np.ndarray:
    return np.vstack([as_weight(m) for m in measures])
