"""Structured verification results and their deterministic serialisation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .qcore import HalfInt


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float | None
    passed: bool
    params: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    title: str
    checks: list = field(default_factory=list)
    conventions: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, value, tol=None, passed=None, params=None, **detail) -> CheckResult:
        """Append a check; ``passed`` defaults to ``value <= tol``."""
        if passed is None:
            passed = bool(value <= tol)
        c = CheckResult(name, float(value), tol, bool(passed), dict(params or {}), detail)
        self.checks.append(c)
        return c

    def extend(self, other: "VerificationReport", prefix: str | None = None):
        for c in other.checks:
            if prefix:
                c = CheckResult(f"{prefix}/{c.name}", c.value, c.tol, c.passed, c.params, c.detail)
            self.checks.append(c)
        for k, v in other.conventions.items():
            self.conventions.setdefault(k, v)
        return self

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def worst(self) -> float:
        return max((c.value for c in self.checks), default=0.0)

    def to_dict(self) -> dict:
        return {"title": self.title, "passed": self.passed,
                "conventions": self.conventions,
                "checks": [asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return dumps(self.to_dict())


def merge(title: str, reports) -> VerificationReport:
    out = VerificationReport(title)
    for r in reports:
        out.extend(r, prefix=r.title)
    return out


def _plain(x):
    if isinstance(x, HalfInt):
        return str(x)
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return str(x)
        # fixed significant digits keep repeated runs byte-identical
        return float(f"{x:.12g}")
    if isinstance(x, complex):
        return [_plain(x.real), _plain(x.imag)]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    return x


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2)
