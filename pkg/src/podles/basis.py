"""Truncated bases of the modules V_N, spinor sums and their real doublings.

Every basis here is a direct sum of *components*, each a truncated module
``V_K = (+)_{l = |K|}^{L_max} V_l``.  Indices are laid out component by
component; inside a component levels ascend in ``l`` and ``m`` runs from
``-l`` to ``l``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .qcore import HalfInt

log = logging.getLogger(__name__)


def default_cutoff(N) -> HalfInt:
    """Default truncation: 40 for integer labels, 81/2 otherwise."""
    N = HalfInt.of(N)
    return HalfInt(80) if N.is_integer else HalfInt(81)


class Space:
    """Direct sum of truncated modules.  Subclasses fill in ``components``."""

    components: tuple

    @property
    def cutoff(self) -> HalfInt:
        return self.components[0].L_max

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([c.dim for c in self.components])])

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def l2(self) -> np.ndarray:
        return np.concatenate([c._l2 for c in self.components])

    @cached_property
    def m2(self) -> np.ndarray:
        return np.concatenate([c._m2 for c in self.components])

    @cached_property
    def component(self) -> np.ndarray:
        return np.concatenate(
            [np.full(c.dim, i, dtype=int) for i, c in enumerate(self.components)]
        )

    @property
    def levels(self) -> np.ndarray:
        """Float level ``l`` of every index."""
        return self.l2 / 2.0

    @property
    def ms(self) -> np.ndarray:
        return self.m2 / 2.0

    @property
    def signature(self) -> tuple:
        return tuple((c.N.twice, c.L_max.twice) for c in self.components)

    def same_as(self, other: "Space") -> bool:
        return self is other or self.signature == other.signature

    def slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def level_set(self) -> np.ndarray:
        """Sorted distinct doubled levels present anywhere in the space."""
        return np.unique(self.l2)


@dataclass(frozen=True, eq=False)
class ModuleBasis(Space):
    """Truncation of ``V_N`` to levels ``|N| <= l <= L_max``."""

    N: HalfInt
    L_max: HalfInt
    _l2: np.ndarray = field(repr=False)
    _m2: np.ndarray = field(repr=False)

    @property
    def components(self):
        return (self,)

    @property
    def dim(self) -> int:
        return int(self._l2.size)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([0, self.dim])

    @property
    def l_min(self) -> HalfInt:
        return abs(self.N)

    @cached_property
    def _index(self) -> dict:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(zip(self._l2, self._m2))}

    def index(self, l, m) -> int:
        """Dense index of ``|l, m>``; raises KeyError for labels outside the basis."""
        return self._index[(HalfInt.of(l).twice, HalfInt.of(m).twice)]

    def lookup(self, l2: np.ndarray, m2: np.ndarray) -> np.ndarray:
        """Vectorised index lookup on doubled labels; -1 where the label is absent."""
        l2 = np.asarray(l2)
        m2 = np.asarray(m2)
        lmin = self.l_min.twice
        ok = (l2 >= lmin) & (l2 <= self.L_max.twice) & (np.abs(m2) <= l2)
        ok &= ((l2 - lmin) % 2 == 0) & ((l2 - m2) % 2 == 0)
        # levels before l contribute sum_{k<l} (2k+1) = (l^2 - lmin^2) states
        lt = np.where(ok, l2, lmin)
        before = (lt * lt - lmin * lmin) // 4
        pos = before + (np.where(ok, m2, -lt) + lt) // 2
        return np.where(ok, pos, -1)

    def label(self, i: int) -> tuple[HalfInt, HalfInt]:
        return HalfInt(int(self._l2[i])), HalfInt(int(self._m2[i]))

    def __repr__(self):
        return f"ModuleBasis(N={self.N}, L_max={self.L_max}, dim={self.dim})"


def build_module(N, L_max) -> ModuleBasis:
    N = HalfInt.of(N)
    L_max = HalfInt.of(L_max)
    if L_max < abs(N):
        raise ValueError(f"L_max={L_max} is below the lowest level |N|={abs(N)}")
    if (L_max - abs(N)).twice % 2:
        raise ValueError(f"L_max={L_max} is not a level of V_{N}")
    l2s, m2s = [], []
    for l2 in range(abs(N).twice, L_max.twice + 1, 2):
        m2 = np.arange(-l2, l2 + 1, 2)
        l2s.append(np.full(m2.size, l2))
        m2s.append(m2)
    return ModuleBasis(N, L_max, np.concatenate(l2s), np.concatenate(m2s))


@dataclass(frozen=True, eq=False)
class SpinorBasis(Space):
    """``V_N (+) V_{N+r}`` with a common cutoff; ``up`` precedes ``down``."""

    up: ModuleBasis
    down: ModuleBasis
    r: HalfInt

    @property
    def components(self):
        return (self.up, self.down)

    @property
    def L_max(self) -> HalfInt:
        return self.up.L_max

    @property
    def N(self) -> HalfInt:
        return self.up.N

    def __repr__(self):
        return f"SpinorBasis(N={self.N}, r={self.r}, L_max={self.L_max}, dim={self.dim})"


def _snap_cutoff(K: HalfInt, L_max: HalfInt) -> HalfInt:
    # largest level of V_K not exceeding L_max
    if (L_max - abs(K)).twice % 2:
        return L_max - HalfInt(1)
    return L_max


def build_spinor(N, r, L_max) -> SpinorBasis:
    N, r, L_max = HalfInt.of(N), HalfInt.of(r), HalfInt.of(L_max)
    if not r.is_integer or r.twice < 2:
        raise ValueError(f"twist r must be an integer >= 1, got {r}")
    top = max(abs(N), abs(N + r))
    if L_max < top:
        raise ValueError(f"L_max={L_max} below max(|N|, |N+r|)={top}")
    L_max = _snap_cutoff(N, L_max)
    return SpinorBasis(build_module(N, L_max), build_module(N + r, L_max), r)


@dataclass(frozen=True, eq=False)
class DoubledBasis(Space):
    """Real-extension doubling ``H_{N,r} (+) H_{-N-r,r}``."""

    left: SpinorBasis
    right: SpinorBasis
    purpose: str = "real-extension"

    @property
    def components(self):
        return self.left.components + self.right.components

    @property
    def L_max(self) -> HalfInt:
        return self.left.L_max

    @property
    def N(self) -> HalfInt:
        return self.left.N

    @property
    def r(self) -> HalfInt:
        return self.left.r

    def __repr__(self):
        return f"DoubledBasis(N={self.N}, r={self.r}, L_max={self.L_max}, dim={self.dim})"


def build_doubled(N, r, L_max) -> DoubledBasis:
    N, r = HalfInt.of(N), HalfInt.of(r)
    left = build_spinor(N, r, L_max)
    right = build_spinor(-N - r, r, left.L_max)
    return DoubledBasis(left, right)


@dataclass(frozen=True, eq=False)
class SumBasis(Space):
    """Arbitrary direct sum of module bases (Fredholm-module constructions)."""

    parts: tuple

    @property
    def components(self):
        return tuple(self.parts)

    @property
    def L_max(self) -> HalfInt:
        return max(c.L_max for c in self.parts)

    def __repr__(self):
        labels = ", ".join(str(c.N) for c in self.parts)
        return f"SumBasis([{labels}], L_max={self.L_max}, dim={self.dim})"


def interior_window(basis: Space, bandwidth: int) -> np.ndarray:
    """Indices with ``l <= L_max - bandwidth``.

    Products of at most ``bandwidth`` width-one band operators are evaluated
    without truncation error on these columns.  An empty window is logged,
    not raised.
    """
    if bandwidth < 0:
        raise ValueError("bandwidth must be nonnegative")
    idx = np.flatnonzero(basis.l2 <= basis.cutoff.twice - 2 * bandwidth)
    if idx.size == 0:
        log.warning("interior window of %r with bandwidth %d is empty", basis, bandwidth)
    return idx
