"""q-numbers, half-integers and the deformation parameter."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Real

import numpy as np


@dataclass(frozen=True)
class DeformationParams:
    """Deformation parameter ``q`` and the optional sphere parameter ``s``."""

    q: float
    s: float | None = None

    def __post_init__(self):
        q = float(self.q)
        if not np.isfinite(q) or not 0.0 < q < 1.0:
            raise ValueError(f"q must satisfy 0 < q < 1, got {self.q!r}")
        object.__setattr__(self, "q", q)
        if self.s is not None:
            s = float(self.s)
            if not np.isfinite(s) or s < 0:
                raise ValueError(f"s must be a nonnegative real, got {self.s!r}")
            object.__setattr__(self, "s", s)

    @property
    def log_q(self) -> float:
        return float(np.log(self.q))


@dataclass(frozen=True, order=True)
class HalfInt:
    """An element of Z/2, stored as twice its value so that parity is exact."""

    twice: int

    @classmethod
    def of(cls, x) -> "HalfInt":
        if isinstance(x, HalfInt):
            return x
        if isinstance(x, str):
            x = Fraction(x.strip())
        if isinstance(x, (int, np.integer)):
            return cls(2 * int(x))
        t = 2 * Fraction(x)
        if t.denominator != 1:
            raise ValueError(f"{x!r} is not a half-integer")
        return cls(int(t))

    @property
    def value(self) -> float:
        return self.twice / 2

    @property
    def is_integer(self) -> bool:
        return self.twice % 2 == 0

    def __float__(self) -> float:
        return self.value

    def __add__(self, other):
        return HalfInt(self.twice + HalfInt.of(other).twice)

    __radd__ = __add__

    def __sub__(self, other):
        return HalfInt(self.twice - HalfInt.of(other).twice)

    def __rsub__(self, other):
        return HalfInt(HalfInt.of(other).twice - self.twice)

    def __neg__(self):
        return HalfInt(-self.twice)

    def __abs__(self):
        return HalfInt(abs(self.twice))

    def __str__(self):
        return str(self.twice // 2) if self.is_integer else f"{self.twice}/2"

    def __repr__(self):
        return f"HalfInt({self})"


def half(x) -> HalfInt:
    return HalfInt.of(x)


def _q_of(params) -> float:
    if isinstance(params, DeformationParams):
        return params.q
    return float(params)


def _as_float(x):
    if isinstance(x, HalfInt):
        return x.value
    if isinstance(x, Real):
        return float(x)
    return np.asarray(x, dtype=float)


def qpower(x, params):
    """``q**x`` for half-integer (or real, or array) exponents; exactly 1 at x = 0."""
    q = _q_of(params)
    return np.power(q, _as_float(x))


def qnumber(x, params):
    """The q-number ``(q**x - q**-x) / (q - 1/q)``; vectorised over arrays."""
    q = _q_of(params)
    x = _as_float(x)
    return (np.power(q, x) - np.power(q, -x)) / (q - 1.0 / q)
