"""Check records produced by the identity and theorem suites."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional


@dataclass(frozen=True)
class Check:
    """Outcome of one identity or inequality check.

    ``deviation`` is the worst observed error or violation magnitude (0 when
    an inequality holds). Checks with ``hard=False`` are informational: they
    are reported but never fail a suite. ``evaluated=False`` marks checks
    that were skipped, e.g. for lack of ground truth or enumeration budget.
    """

    name: str
    deviation: float
    tolerance: float
    k: Optional[int] = None
    hard: bool = True
    evaluated: bool = True
    detail: str = ""

    @property
    def passed(self) -> bool:
        if not (self.hard and self.evaluated):
            return True
        return bool(self.deviation <= self.tolerance)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def skipped(name: str, reason: str, k: Optional[int] = None) -> Check:
    return Check(name, math.nan, math.nan, k=k, evaluated=False, detail=reason)


def rel_dev(a: float, b: float, scale: float = 0.0) -> float:
    """``|a - b| / max(|a|, |b|, scale)``; zero when all three vanish."""
    denom = max(abs(a), abs(b), scale)
    if denom == 0.0:
        return 0.0
    return abs(a - b) / denom


def worst(checks: Iterable[Check]) -> dict[str, Check]:
    """Keep the check with the largest deviation for every name."""
    out: dict[str, Check] = {}
    for c in checks:
        prev = out.get(c.name)
        if prev is None:
            out[c.name] = c
            continue
        if not c.evaluated:
            continue
        if not prev.evaluated or (c.passed, -c.deviation) < (prev.passed, -prev.deviation):
            out[c.name] = c
    return out
