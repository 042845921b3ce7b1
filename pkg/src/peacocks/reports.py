"""Report containers returned by every checker."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"

    def __str__(self) -> str:
        return self.value


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and enums to plain JSON types."""
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isnan(x):
            return None
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


@dataclass
class CheckReport:
    """Outcome of a property check.

    ``worst_violation`` is the most negative normalized quantity found (0 when
    nothing is negative); ``verdict`` is ``fail`` exactly when it drops below
    ``-tolerance``. The witness dict carries raw values for the worst case.
    """

    verdict: Verdict
    worst_violation: float
    witness: dict | None
    tolerance: float
    checks_performed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.verdict = Verdict(self.verdict)
        if self.verdict is Verdict.FAIL and self.witness is None:
            raise ValueError("a failing report needs a witness")

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    @property
    def failed(self) -> bool:
        return self.verdict is Verdict.FAIL

    def to_dict(self) -> dict:
        return to_jsonable({
            "verdict": self.verdict,
            "worst_violation": self.worst_violation,
            "witness": self.witness,
            "tolerance": self.tolerance,
            "checks_performed": self.checks_performed,
            "meta": self.meta,
        })

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "CheckReport":
        return cls(
            verdict=Verdict(d["verdict"]),
            worst_violation=float(d["worst_violation"]),
            witness=d.get("witness"),
            tolerance=float(d["tolerance"]),
            checks_performed=int(d["checks_performed"]),
            meta=d.get("meta", {}),
        )


def merge_reports(reports: list[CheckReport], tolerance: float) -> CheckReport:
    """Deterministic merge: min worst violation, first failing witness in order."""
    worst = 0.0
    witness = None
    n = 0
    verdict = Verdict.PASS
    for r in reports:
        n += r.checks_performed
        if r.verdict is Verdict.INCONCLUSIVE and verdict is Verdict.PASS:
            verdict = Verdict.INCONCLUSIVE
        if r.worst_violation < worst:
            worst = r.worst_violation
            witness = r.witness
    if worst < -tolerance:
        verdict = Verdict.FAIL
    return CheckReport(verdict, worst, witness, tolerance, n)
