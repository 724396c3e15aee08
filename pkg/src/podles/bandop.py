"""Sparse band operators on truncated module bases.

A :class:`BandOperator` wraps a scipy CSR matrix between two bases together
with an ``antilinear`` flag: an antilinear operator acts as ``v -> M @ conj(v)``.
Alongside the matrix every operator carries ``scale``, a nonnegative matrix
that bounds the magnitude of the terms summed into each entry.  It starts as
``|M|`` and propagates through sums and products as ``|X||Y|``, so that
``|entry| / max(1, scale)`` measures a residual relative to the size of the
numbers that cancelled to produce it.  That is the only meaningful notion of
"zero" for commutators with the unbounded Dirac operators built later, whose
entries grow like ``q**-l``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .basis import ModuleBasis, Space
from .qcore import HalfInt

log = logging.getLogger(__name__)

#: entries smaller than this multiple of their scale are treated as roundoff
NOISE = 1e-13


class BasisMismatch(ValueError):
    pass


def _csr(M) -> sp.csr_matrix:
    M = sp.csr_matrix(M)
    M.sum_duplicates()
    M.eliminate_zeros()
    return M


@dataclass(frozen=True, eq=False)
class BandOperator:
    domain: Space
    codomain: Space
    matrix: sp.csr_matrix
    antilinear: bool = False
    width: int = 1
    scale: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        M = _csr(self.matrix)
        if M.shape != (self.codomain.dim, self.domain.dim):
            raise ValueError(f"matrix shape {M.shape} does not match bases "
                             f"({self.codomain.dim}, {self.domain.dim})")
        object.__setattr__(self, "matrix", M)
        S = abs(M) if self.scale is None else _csr(self.scale)
        object.__setattr__(self, "scale", S)

    # -- arithmetic -------------------------------------------------------
    def _like(self, M, S, width=None, anti=None):
        return BandOperator(self.domain, self.codomain, M,
                            self.antilinear if anti is None else anti,
                            self.width if width is None else width, S)

    def _check_same(self, other: "BandOperator"):
        if not (self.domain.same_as(other.domain) and self.codomain.same_as(other.codomain)):
            raise BasisMismatch("operators act between different bases")
        if self.antilinear != other.antilinear:
            raise ValueError("cannot add a linear and an antilinear operator")

    def __add__(self, other):
        self._check_same(other)
        return self._like(self.matrix + other.matrix, self.scale + other.scale,
                          max(self.width, other.width))

    def __sub__(self, other):
        self._check_same(other)
        return self._like(self.matrix - other.matrix, self.scale + other.scale,
                          max(self.width, other.width))

    def __neg__(self):
        return self._like(-self.matrix, self.scale)

    def __mul__(self, c):
        # scalar on the left of the operator: (c X) v = c (X v)
        return self._like(c * self.matrix, abs(c) * self.scale)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return compose(self, other)

    # -- views ------------------------------------------------------------
    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def columns(self, window=None) -> sp.csc_matrix:
        M = self.matrix.tocsc()
        return M if window is None else M[:, window]

    def max_entry(self, window=None) -> float:
        M = self.columns(window)
        return float(abs(M).max()) if M.nnz else 0.0

    def scaled_max(self, window=None) -> float:
        """Largest ``|entry| / max(1, scale)`` over the given columns."""
        M = self.columns(window).tocoo()
        if M.nnz == 0:
            return 0.0
        S = self.scale.tocsc()
        if window is not None:
            S = S[:, window]
        s = np.asarray(S.tocsr()[M.row, M.col]).ravel()
        return float(np.max(np.abs(M.data) / np.maximum(1.0, s)))


def identity(basis: Space) -> BandOperator:
    return BandOperator(basis, basis, sp.identity(basis.dim, format="csr"), width=0)


def zero(domain: Space, codomain: Space | None = None) -> BandOperator:
    codomain = domain if codomain is None else codomain
    return BandOperator(domain, codomain, sp.csr_matrix((codomain.dim, domain.dim)), width=0)


def diagonal(basis: Space, values) -> BandOperator:
    return BandOperator(basis, basis, sp.diags(np.asarray(values), format="csr"), width=0)


def from_terms(domain: Space, codomain: Space, terms, antilinear=False,
               closed=True) -> BandOperator:
    """Assemble a band operator from coefficient rules.

    Each term is ``(src, dst, dl, dm, rule)``: ``src``/``dst`` are component
    indices, ``dl``/``dm`` half-integer shifts and ``rule(l, m)`` a vectorised
    coefficient function receiving float arrays of the source labels.  Targets
    above the cutoff are truncated.  With ``closed=True`` a nonzero coefficient
    pointing at a label absent from the target module is a rule error and
    raises; ``closed=False`` silently projects such terms away.
    """
    rows, cols, vals = [], [], []
    width = 0
    for src, dst, dl, dm, rule in terms:
        dl2, dm2 = HalfInt.of(dl).twice, HalfInt.of(dm).twice
        width = max(width, abs(dl2) // 2 + abs(dl2) % 2)
        sb: ModuleBasis = domain.components[src]
        tb: ModuleBasis = codomain.components[dst]
        l2, m2 = sb._l2, sb._m2
        coef = np.broadcast_to(np.asarray(rule(l2 / 2.0, m2 / 2.0)), l2.shape)
        tl2, tm2 = l2 + dl2, m2 + dm2
        tgt = tb.lookup(tl2, tm2)
        live = coef != 0
        lost = live & (tgt < 0) & (tl2 <= tb.L_max.twice)
        if closed and np.any(lost):
            i = int(np.flatnonzero(lost)[0])
            raise ValueError(
                f"rule ({src}->{dst}, dl={HalfInt(dl2)}, dm={HalfInt(dm2)}) sends "
                f"|{HalfInt(int(l2[i]))},{HalfInt(int(m2[i]))}> outside the target basis "
                f"with coefficient {coef[i]!r}")
        keep = live & (tgt >= 0)
        rows.append(tgt[keep] + codomain.offsets[dst])
        cols.append(np.flatnonzero(keep) + domain.offsets[src])
        vals.append(coef[keep])
    if rows:
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    M = sp.coo_matrix((vals, (rows, cols)), shape=(codomain.dim, domain.dim))
    return BandOperator(domain, codomain, M.tocsr(), antilinear, width)


def from_label_map(domain: Space, codomain: Space, entries, antilinear=False) -> BandOperator:
    """Operator sending ``|l,m>`` of component ``src`` to ``coef |l',m'>`` of ``dst``.

    ``entries`` holds ``(src, dst, relabel, rule)`` where ``relabel(l2, m2)``
    returns doubled target labels and ``rule(l, m)`` the coefficient.  Every
    source label must land inside the target module.
    """
    rows, cols, vals = [], [], []
    for src, dst, relabel, rule in entries:
        sb, tb = domain.components[src], codomain.components[dst]
        tl2, tm2 = relabel(sb._l2, sb._m2)
        tgt = tb.lookup(tl2, tm2)
        if np.any(tgt < 0):
            raise ValueError(f"label map {src}->{dst} leaves the target module")
        coef = np.broadcast_to(np.asarray(rule(sb._l2 / 2.0, sb._m2 / 2.0)), tgt.shape)
        rows.append(tgt + codomain.offsets[dst])
        cols.append(np.arange(sb.dim) + domain.offsets[src])
        vals.append(coef)
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(codomain.dim, domain.dim))
    return BandOperator(domain, codomain, M.tocsr(), antilinear, 0)


def compose(A: BandOperator, B: BandOperator) -> BandOperator:
    """``A o B``; the coefficients of ``B`` are conjugated when ``A`` is antilinear."""
    if not B.codomain.same_as(A.domain):
        raise BasisMismatch(f"cannot compose: {B.codomain!r} is not {A.domain!r}")
    BM = B.matrix.conj() if A.antilinear else B.matrix
    return BandOperator(B.domain, A.codomain, A.matrix @ BM, A.antilinear ^ B.antilinear,
                        A.width + B.width, A.scale @ B.scale)


def adjoint(A: BandOperator) -> BandOperator:
    if A.antilinear:
        raise ValueError("adjoint is only defined here for linear operators")
    return BandOperator(A.codomain, A.domain, A.matrix.conj().T, False, A.width, A.scale.T)


def unitary_inverse(U: BandOperator) -> BandOperator:
    """Inverse of a (anti)unitary operator: ``M^dagger`` if linear, ``M^T`` if antilinear."""
    M = U.matrix.T if U.antilinear else U.matrix.conj().T
    return BandOperator(U.codomain, U.domain, M, U.antilinear, U.width, U.scale.T)


def commutator(A: BandOperator, B: BandOperator) -> BandOperator:
    return compose(A, B) - compose(B, A)


def anticommutator(A: BandOperator, B: BandOperator) -> BandOperator:
    return compose(A, B) + compose(B, A)


def restrict(A: BandOperator, window) -> sp.csr_matrix:
    """Column restriction of the matrix, as used by windowed norms."""
    return A.columns(window).tocsr()


# -- operator norm ----------------------------------------------------------

@dataclass(frozen=True)
class NormEstimate:
    value: float
    converged: bool
    iterations: int

    def __float__(self):
        return self.value


def _power(M: sp.csr_matrix, v: np.ndarray, tol: float, max_iter: int):
    MH = M.conj().T.tocsr()
    v = v / np.linalg.norm(v)
    prev = 0.0
    for it in range(1, max_iter + 1):
        w = MH @ (M @ v)
        lam = float(np.real(np.vdot(v, w)))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, True, it
        v = w / nw
        if it > 1 and abs(lam - prev) <= tol * abs(lam):
            return float(np.sqrt(max(lam, 0.0))), True, it
        prev = lam
    return float(np.sqrt(max(prev, 0.0))), False, max_iter


def _gram_blocks(M: sp.csr_matrix):
    """Invariant blocks of ``M^dagger M`` (connected components of its pattern)."""
    G = (M.conj().T @ M).tocsr()
    n, lab = connected_components(G != 0, directed=False)
    order = np.argsort(lab, kind="stable")
    cuts = np.flatnonzero(np.diff(lab[order])) + 1
    return G, np.split(order, cuts)


def operator_norm(A, window=None, tol=1e-10, max_iter=10000, seed=0,
                  method: str = "blocks", dense_limit: int = 600) -> NormEstimate:
    """Largest singular value of the (column-windowed) matrix.

    ``method="power"`` runs power iteration on ``A^dagger A`` from the flat
    vector ``1/sqrt(dim)`` and once more from a seeded random vector, keeping
    the larger estimate.  ``method="blocks"`` (default) first splits
    ``A^dagger A`` into its invariant blocks; the band operators here conserve
    a shifted weight ``m``, so the blocks are small and are solved exactly
    with a dense symmetric eigensolver.  Blocks above ``dense_limit`` fall
    back to power iteration.  Power iteration alone stalls when the top
    singular values cluster, which is the typical situation for commutators
    whose norm is a supremum over levels.
    """
    M = A.matrix if isinstance(A, BandOperator) else sp.csr_matrix(A)
    if window is not None:
        M = M.tocsc()[:, window].tocsr()
    n = M.shape[1]
    if n == 0 or M.nnz == 0:
        return NormEstimate(0.0, True, 0)
    if method == "power":
        return _power_norm(M, tol, max_iter, seed)
    if method != "blocks":
        raise ValueError(f"unknown method {method!r}")
    G, blocks = _gram_blocks(M)
    best, ok, its = 0.0, True, 0
    singles = np.concatenate([b for b in blocks if b.size == 1] or [np.zeros(0, int)])
    if singles.size:
        best = float(np.max(np.real(G.diagonal()[singles]), initial=0.0))
    for b in blocks:
        if b.size == 1:
            continue
        if b.size <= dense_limit:
            lam = float(np.linalg.eigvalsh(G[b][:, b].toarray())[-1])
        else:
            est = _power_norm(M[:, b], tol, max_iter, seed)
            lam, ok, its = est.value ** 2, ok and est.converged, its + est.iterations
        best = max(best, lam)
    return NormEstimate(float(np.sqrt(max(best, 0.0))), ok, its)


def _power_norm(M, tol, max_iter, seed) -> NormEstimate:
    n = M.shape[1]
    runs = [_power(M, np.full(n, 1.0 / np.sqrt(n)), tol, max_iter)]
    rng = np.random.default_rng(seed)
    runs.append(_power(M, rng.standard_normal(n) + 0j, tol, max_iter))
    best = max(runs, key=lambda t: t[0])
    if not best[1]:
        log.warning("power iteration did not converge in %d steps", max_iter)
    return NormEstimate(best[0], best[1], sum(r[2] for r in runs))


# -- level decay ------------------------------------------------------------

@dataclass(frozen=True)
class DecayProfile:
    """Per-level maxima ``p_l`` over source columns and a fitted log-slope."""

    levels: np.ndarray
    values: np.ndarray
    floors: np.ndarray  # values at or below these are not trusted
    trusted: np.ndarray
    rate: float
    fit_levels: np.ndarray

    @property
    def n_trusted(self) -> int:
        return int(self.trusted.sum())

    @property
    def vanishes(self) -> bool:
        """True when every examined level sits below its roundoff floor."""
        return self.levels.size > 0 and self.n_trusted == 0


def decay_profile(A: BandOperator, drop_top: int | None = None,
                  min_level=None) -> DecayProfile:
    """Level maxima of ``A`` and the least-squares slope of ``log p_l``.

    The top ``drop_top`` levels (default: the operator width) are excluded as
    truncation-affected.  An entry counts as resolved when it exceeds both the
    underflow floor 1e-300 and ``NOISE`` times its own scale entry; ``p_l`` is
    the largest resolved entry with source level ``l`` and a level is trusted
    when it has one.  The slope is fitted over the upper half of the trusted
    levels, where subleading corrections have died out.
    """
    drop_top = A.width if drop_top is None else drop_top
    dom = A.domain
    l2 = dom.l2
    top = dom.cutoff.twice - 2 * drop_top
    cand = np.unique(l2[l2 <= top])
    if min_level is not None:
        cand = cand[cand >= HalfInt.of(min_level).twice]
    M = A.matrix.tocoo()
    mag = np.abs(M.data)
    sc = np.asarray(A.scale.tocsr()[M.row, M.col]).ravel() if M.nnz else mag
    resolved = (mag > 1e-300) & (mag > NOISE * sc)
    src = l2[M.col]
    vals = np.zeros(cand.size)
    pos = np.searchsorted(cand, src)
    inside = (pos < cand.size) & (cand[np.minimum(pos, cand.size - 1)] == src) if cand.size \
        else np.zeros(src.size, bool)
    if np.any(inside & resolved):
        np.maximum.at(vals, pos[inside & resolved], mag[inside & resolved])
    return level_profile(cand / 2.0, vals)


def level_profile(levels, values, floors=None) -> DecayProfile:
    """Fit a decay profile to given per-level magnitudes (zeros are untrusted)."""
    lv = np.asarray(levels, dtype=float)
    vals = np.abs(np.asarray(values, dtype=float))
    floors = np.zeros_like(vals) if floors is None else np.asarray(floors, dtype=float)
    trusted = vals > np.maximum(floors, 1e-300)
    tl = lv[trusted]
    rate = float("nan")
    half = tl.size // 2
    fit = tl[half:]
    if fit.size >= 2:
        rate = float(np.polyfit(fit, np.log(vals[trusted][half:]), 1)[0])
    elif tl.size == 0 and lv.size:
        rate = float("-inf")
    return DecayProfile(lv, vals, floors, trusted, rate, fit)


class InsufficientLevels(ValueError):
    pass


def classify_kq(profile: DecayProfile, params, min_levels: int = 10) -> tuple[str, float]:
    """Return ``(label, rate)`` with label one of in_Kq, bounded_not_Kq, growing.

    An operator whose entries all sit at roundoff level over at least
    ``min_levels`` levels is finite rank for practical purposes and lands in
    ``in_Kq`` with rate ``-inf``.  The same holds when the resolved entries
    stop before the top ``exhausted`` levels: they decayed through the
    roundoff floor, which a bounded non-decaying operator cannot do.
    """
    lnq = float(np.log(params.q if hasattr(params, "q") else params))
    band = 0.05 * abs(lnq)
    if profile.vanishes and profile.levels.size >= min_levels:
        return "in_Kq", float("-inf")
    exhausted = 3
    if (profile.n_trusted < min_levels and profile.levels.size >= min_levels
            and not profile.trusted[-exhausted:].any()):
        rho = profile.rate if np.isfinite(profile.rate) else float("-inf")
        return "in_Kq", min(rho, lnq) if np.isfinite(rho) else rho
    if profile.n_trusted < min_levels:
        raise InsufficientLevels(
            f"only {profile.n_trusted} trusted levels (need {min_levels}); enlarge L_max")
    rho = profile.rate
    if rho <= lnq + band:
        return "in_Kq", rho
    if rho > band:
        return "growing", rho
    return "bounded_not_Kq", rho


# -- export -----------------------------------------------------------------

def dump_matrix(A: BandOperator, path) -> None:
    """Write nonzero entries as ``row col re im`` lines, row-major, after a header."""
    M = A.matrix.tocoo()
    order = np.lexsort((M.col, M.row))
    with open(path, "w") as fh:
        fh.write(f"# shape {M.shape[0]} {M.shape[1]} antilinear {int(A.antilinear)}\n")
        for i in order:
            v = complex(M.data[i])
            fh.write(f"{M.row[i]} {M.col[i]} {v.real:.17g} {v.imag:.17g}\n")


def load_matrix(path) -> tuple[np.ndarray, bool]:
    with open(path) as fh:
        head = fh.readline().split()
        shape = (int(head[2]), int(head[3]))
        anti = bool(int(head[5]))
        D = np.zeros(shape, complex)
        for line in fh:
            r, c, re, im = line.split()
            D[int(r), int(c)] = complex(float(re), float(im))
    return D, anti
