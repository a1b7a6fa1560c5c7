"""JSON documents for spaces, measures, maps, systems and sequence manifests.

A space document is ``{"n", "dist", "weight", "base", "labels"?}`` where
``dist`` is either a nested list or ``{"generator": name, "params": {...}}``.
Manifests list spaces either inline or as paths relative to the manifest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .approx import WeakApprox
from .category import SystemOfSpaces
from .mmspace import (
    BasisMetric,
    DenseMetric,
    LineMetric,
    Metric,
    PointMap,
    PointedSpace,
    ScaledMetric,
    SubsetMetric,
    UniformMetric,
)
from .report import jsonable

__all__ = [
    "metric_from_doc",
    "space_to_doc",
    "space_from_doc",
    "load_json",
    "save_json",
    "canonical",
    "doc_hash",
    "load_space",
    "load_measure",
    "load_spaces",
    "system_to_docs",
    "load_system",
    "load_weak",
    "load_measure_sequence",
]


def metric_from_doc(doc) -> Metric:
    if isinstance(doc, list):
        return DenseMetric(np.array(doc, dtype=float))
    if not isinstance(doc, dict) or "generator" not in doc:
        raise ValueError("dist must be a matrix or a generator document")
    g, p = doc["generator"], doc.get("params", {})
    if g == "line_grid":
        if "coords" in p:
            return LineMetric(p["coords"])
        n, ext = int(p["points"]), float(p.get("extent", 1.0))
        return LineMetric(np.arange(n) * ext / (n - 1))
    if g == "linf_scaled_basis":
        return BasisMetric(p["ray"], p["scale"])
    if g == "uniform":
        return UniformMetric(int(p["n"]), float(p.get("value", 1.0)))
    if g == "scaled":
        return ScaledMetric(metric_from_doc(p["inner"]), float(p["factor"]))
    if g == "subset":
        return SubsetMetric(metric_from_doc(p["inner"]), p["index"])
    raise ValueError(f"unknown metric generator {g!r}")


def space_to_doc(s: PointedSpace) -> dict:
    doc = {"n": s.n, "dist": s.metric.to_doc(), "weight": s.weight.tolist(), "base": s.base}
    if s.labels is not None:
        doc["labels"] = list(s.labels)
    return doc


def space_from_doc(doc: dict) -> PointedSpace:
    try:
        metric = metric_from_doc(doc["dist"])
        s = PointedSpace(metric, np.array(doc["weight"], dtype=float), int(doc.get("base", 0)), doc.get("labels"))
    except KeyError as e:
        raise ValueError(f"space document is missing {e.args[0]!r}") from None
    if "n" in doc and int(doc["n"]) != s.n:
        raise ValueError(f"space document says n = {doc['n']} but has {s.n} points")
    return s


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def canonical(doc) -> str:
    return json.dumps(jsonable(doc), sort_keys=True, separators=(",", ":"))


def save_json(doc, path) -> str:
    text = canonical(doc) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return text


def doc_hash(doc) -> str:
    return hashlib.sha256(canonical(doc).encode()).hexdigest()


def _resolve(item, root: Path):
    if isinstance(item, str):
        return load_json(root / item)
    return item


def load_space(path) -> PointedSpace:
    return space_from_doc(load_json(path))


def load_measure(path, host: PointedSpace) -> np.ndarray:
    doc = load_json(path)
    w = np.array(doc["weight"] if isinstance(doc, dict) else doc, dtype=float)
    if w.shape != (host.n,):
        raise ValueError(f"measure has {w.size} atoms, host has {host.n}")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("measure weights must be finite and nonnegative")
    return w


def load_spaces(path) -> list[PointedSpace]:
    """Spaces of a manifest ``{"spaces": [...]}``."""
    root = Path(path).parent
    doc = load_json(path)
    return [space_from_doc(_resolve(x, root)) for x in doc["spaces"]]


def system_to_docs(sys: SystemOfSpaces) -> dict:
    doc = {"kind": sys.kind, "spaces": [space_to_doc(s) for s in sys.spaces],
           "bonds": [{"img": b.img.tolist()} for b in sys.bonds]}
    if sys.meta:
        doc["meta"] = sys.meta
        if "envelope" in sys.meta:
            doc["envelope"] = sys.meta["envelope"]
    return doc


def load_system(path) -> SystemOfSpaces:
    root = Path(path).parent
    doc = load_json(path)
    spaces = [space_from_doc(_resolve(x, root)) for x in doc["spaces"]]
    kind = doc.get("kind", "direct")
    bonds = []
    for i, b in enumerate(doc.get("bonds", [])):
        src, dst = (i, i + 1) if kind == "direct" else (i + 1, i)
        bonds.append(PointMap(spaces[src], spaces[dst], b["img"] if isinstance(b, dict) else b))
    meta = dict(doc.get("meta", {}))
    if "envelope" in doc:
        meta["envelope"] = doc["envelope"]
    return SystemOfSpaces(kind, spaces, bonds, meta)


def load_weak(path, X: PointedSpace, Y: PointedSpace) -> WeakApprox:
    doc = load_json(path)
    if "approx" in doc:
        doc = doc["approx"]
    return WeakApprox(PointMap(X, Y, doc["img"]), np.asarray(doc["good"], dtype=np.intp),
                      float(doc["R"]), float(doc["eps"]))


def load_measure_sequence(path):
    """``{"host": space, "measures": [[...] or {"weight": [...]}, ...]}``."""
    from .weaklimit import MeasureSequence

    root = Path(path).parent
    doc = load_json(path)
    host = space_from_doc(_resolve(doc["host"], root))
    rows = [m["weight"] if isinstance(m, dict) else m for m in doc["measures"]]
    return MeasureSequence(host, np.array(rows, dtype=float).reshape(len(rows), host.n))
