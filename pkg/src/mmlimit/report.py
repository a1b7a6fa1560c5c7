"""Verdict objects and JSON conversion shared by all modules."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any

import numpy as np

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"


@dataclass
class Verdict:
    """Outcome of a check.

    ``status`` is one of ``"pass"``, ``"fail"`` or ``"inconclusive"``.
    ``certified`` marks a failure backed by a proof about the instance rather
    than a search that came up empty.
    """

    status: str
    reason: str = ""
    certified: bool = False
    details: dict[str, Any] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.status == PASS

    @property
    def ok(self) -> bool:
        return self.status == PASS

    @classmethod
    def passed(cls, reason: str = "", **details) -> "Verdict":
        return cls(PASS, reason, False, details)

    @classmethod
    def failed(cls, reason: str, certified: bool = False, **details) -> "Verdict":
        return cls(FAIL, reason, certified, details)

    @classmethod
    def unknown(cls, reason: str, **details) -> "Verdict":
        return cls(INCONCLUSIVE, reason, False, details)

    def to_dict(self) -> dict:
        return {"status": self.status, "reason": self.reason, "certified": self.certified,
                "details": jsonable(self.details)}


def fmt(x: float) -> str:
    return f"{x:.6g}"


def jsonable(obj):
    """Convert numpy scalars/arrays, dataclasses and infinities to JSON-safe values."""
    if isinstance(obj, Verdict):
        return obj.to_dict()
    if is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return obj.to_dict()
        return {f.name: jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"))
