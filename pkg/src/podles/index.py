"""Fredholm modules, Higson doubling and index pairings with the projector.

The pairing of an even Fredholm module ``(H, F, gamma)`` with the projector
``P = [[1-A, qB], [qB*, q^2 A]]`` is computed as

    <F, P> = 1/2 Tr gamma F [F, pi(tr P)],   tr P = 1 + (q^2 - 1) A,

with the trace taken level by level.  ``P`` itself is idempotent; the
factor 1/2 that is sometimes written inside the projector belongs to the
normalisation of the cocycle, and the matrix ``P/2`` is not idempotent.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import bandop as bo
from .basis import SpinorBasis, SumBasis, build_module, build_spinor, interior_window
from .dirac import _blocks, build_dirac_general, build_grading, matched_level
from .qcore import DeformationParams, HalfInt
from .report import VerificationReport
from .standard import AlgebraElement, Representation, a_diagonal, build_rep_std

log = logging.getLogger(__name__)

TAIL_TOL = 1e-8


class TailTooLarge(RuntimeError):
    """The geometric tail estimate exceeds the tolerance; enlarge L_max."""


@dataclass(eq=False)
class FredholmModule:
    basis: object
    F: bo.BandOperator
    K: bo.BandOperator
    gamma: bo.BandOperator
    rep: Representation
    doubled: bool = False
    unit: bo.BandOperator | None = None  # image of 1 (non-unital after doubling)

    def image(self, x: AlgebraElement) -> bo.BandOperator:
        I = self.unit if self.unit is not None else bo.identity(self.basis)
        out = x.c1 * I
        for c, X in ((x.cA, self.rep.A), (x.cB, self.rep.B), (x.cBs, self.rep.Bs)):
            if c != 0:
                out = out + c * X
        return out


def _sign_and_kernel(D: bo.BandOperator, basis):
    """Blockwise sign of a component-paired operator and its kernel projector."""
    spinors = [basis] if isinstance(basis, SpinorBasis) else [basis.left, basis.right]
    rows, cols, vals, kern = [], [], [], []
    for s, spinor in enumerate(spinors):
        off = int(basis.offsets[2 * s])
        up = spinor.up
        _, _, has, a, b, _ = _blocks(D, spinor, off)
        jd = spinor.down.lookup(up._l2, up._m2)
        iu = np.arange(up.dim)
        live = has & (a != 0)
        if np.any(has & ((a == 0) != (b == 0))):
            raise ValueError("block with a one-sided zero: not a paired operator")
        ru, rd = off + iu[live], off + up.dim + jd[live]
        rows += [rd, ru]
        cols += [ru, rd]
        vals += [a[live] / np.abs(a[live]), b[live] / np.abs(b[live])]
        dead_up = off + iu[~live]
        dead_dn = off + up.dim + np.concatenate([jd[has & ~live], _unpaired(spinor, jd, has)])
        kern += [dead_up, dead_dn]
    n = basis.dim
    F = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    k = np.concatenate(kern).astype(int)
    K = sp.coo_matrix((np.ones(k.size), (k, k)), shape=(n, n)).tocsr()
    return (bo.BandOperator(basis, basis, F, width=0), bo.BandOperator(basis, basis, K, width=0))


def _unpaired(spinor, jd, has):
    return np.setdiff1d(np.arange(spinor.down.dim), jd[has])


def build_fredholm(D: bo.BandOperator, basis, gamma=None, rep=None, params=None) -> FredholmModule:
    """``F = sign(D)`` (zero on the kernel) and the kernel projector ``K``."""
    M = D.matrix.tocoo()
    comp, l2, m2 = basis.component, basis.l2, basis.m2
    ok = (comp[M.row] // 2 == comp[M.col] // 2) & (l2[M.row] == l2[M.col]) & (m2[M.row] == m2[M.col])
    if not np.all(ok):
        raise ValueError("build_fredholm needs a component-paired, (l,m)-diagonal D")
    F, K = _sign_and_kernel(D, basis)
    gamma = gamma if gamma is not None else build_grading(basis, "down_plus")
    rep = rep if rep is not None else build_rep_std(None, params, basis)
    return FredholmModule(basis, F, K, gamma, rep)


def _blockdiag(X: bo.BandOperator, Y: bo.BandOperator, basis) -> bo.BandOperator:
    M = sp.block_diag([X.matrix, Y.matrix], format="csr")
    S = sp.block_diag([X.scale, Y.scale], format="csr")
    return bo.BandOperator(basis, basis, M, width=max(X.width, Y.width), scale=S)


def higson_double(module: FredholmModule) -> FredholmModule:
    """Doubled module on ``H (+) H``: pi' = diag(pi, 0), gamma' = diag(gamma, -gamma),
    F' = [[F, K], [K, -F]]."""
    if module.doubled:
        raise ValueError("module is already doubled")
    h = module.basis
    big = SumBasis(tuple(h.components) * 2)
    Z = bo.zero(h)
    F, K = module.F.matrix, module.K.matrix
    Fp = bo.BandOperator(big, big, sp.bmat([[F, K], [K, -F]], format="csr"), width=0)
    Kp = bo.zero(big)
    gp = _blockdiag(module.gamma, -module.gamma, big)
    rep = Representation(_blockdiag(module.rep.A, Z, big), _blockdiag(module.rep.B, Z, big),
                         _blockdiag(module.rep.Bs, Z, big), module.rep.kind, module.rep.branches)
    unit = _blockdiag(bo.identity(h), Z, big)
    return FredholmModule(big, Fp, Kp, gp, rep, True, unit)


def cocycle_operator(module: FredholmModule, x: AlgebraElement) -> bo.BandOperator:
    """``gamma (F [F, pi(x)] + K {K, pi(x)})``."""
    X = module.image(x)
    T = module.F @ bo.commutator(module.F, X)
    if module.K.matrix.nnz:
        T = T + module.K @ bo.anticommutator(module.K, X)
    return module.gamma @ T


def level_traces(T: bo.BandOperator, basis):
    """Diagonal of ``T`` summed per level, with a roundoff estimate per level."""
    d = T.matrix.diagonal()
    s = T.scale.diagonal()
    lv = np.unique(basis.l2)
    pos = np.searchsorted(lv, basis.l2)
    tr = np.zeros(lv.size, dtype=d.dtype)
    noise = np.zeros(lv.size)
    np.add.at(tr, pos, d)
    np.add.at(noise, pos, 64 * np.finfo(float).eps * s)
    return lv / 2.0, np.real(tr), noise


# -- projector -------------------------------------------------------------------------

@dataclass(eq=False)
class ProjectorE:
    entries: tuple  # 2x2 nested tuple of AlgebraElements
    operator: bo.BandOperator
    half: bool = False

    def trace(self) -> AlgebraElement:
        return self.entries[0][0] + self.entries[1][1]


def projector_entries(q: float, half: bool = False):
    c = 0.5 if half else 1.0
    E = AlgebraElement
    return ((E(c1=c, cA=-c), E(cB=c * q)), (E(cBs=c * q), E(cA=c * q * q)))


def build_projector(rep: Representation, params, half: bool = False) -> ProjectorE:
    """Realise the 2x2 projector on ``H (+) H``; ``half=True`` gives the 1/2-scaled matrix."""
    ent = projector_entries(params.q, half)
    h = rep.A.domain
    big = SumBasis(tuple(h.components) * 2)
    blocks = [[x.represent(rep) for x in row] for row in ent]
    M = sp.bmat([[b.matrix for b in row] for row in blocks], format="csr")
    S = sp.bmat([[b.scale for b in row] for row in blocks], format="csr")
    return ProjectorE(ent, bo.BandOperator(big, big, M, width=1, scale=S), half)


def check_projector(rep: Representation, params, half: bool = False, tol=1e-11) -> VerificationReport:
    P = build_projector(rep, params, half)
    E = P.operator
    w = interior_window(E.domain, 2)
    out = VerificationReport("projector", conventions={"half": half})
    out.add("e^2=e", (E @ E - E).scaled_max(w), tol)
    out.add("e^dag=e", (E - bo.adjoint(E)).scaled_max(w), tol)
    return out


# -- pairings ---------------------------------------------------------------------------

@dataclass
class PairingReport:
    value: float
    tail: float
    L_max: HalfInt
    expected: float
    conventions: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    contributions: np.ndarray | None = field(default=None, repr=False)
    levels: np.ndarray | None = field(default=None, repr=False)

    @property
    def tolerance(self) -> float:
        return max(TAIL_TOL, self.tail)

    @property
    def passed(self) -> bool:
        return bool(abs(self.value - self.expected) <= self.tolerance)

    def row(self) -> dict:
        return {"N": str(self.params.get("N")), "r": str(self.params.get("r", "")),
                "q": self.params.get("q"), "value": self.value, "tail": self.tail,
                "oracle": self.expected, "pass": self.passed}


def tail_bound(contrib, noise, n_fit: int = 5, max_ratio: float = 0.999) -> tuple[float, float]:
    """Bound on the levels beyond the cutoff, ``last * ratio / (1 - ratio)``.

    The ratio is fitted over the last ``n_fit`` levels whose contribution
    stands above roundoff.  Levels that already sank into roundoff were summed
    anyway, so the bound is propagated past them.  Accumulated roundoff is
    added.  Returns ``(bound, ratio)``; ``ratio`` is NaN when nothing is
    resolved at all.
    """
    c = np.abs(np.asarray(contrib, dtype=float))
    noise = np.asarray(noise, dtype=float)
    roundoff = float(np.sum(noise))
    trusted = np.flatnonzero(c > noise)
    if trusted.size < 2:
        return roundoff, float("nan")
    idx = trusted[-n_fit:]
    ratio = float(np.exp(np.polyfit(idx, np.log(c[idx]), 1)[0]))
    if ratio >= max_ratio:
        raise TailTooLarge(f"tail ratio {ratio:.4f} >= {max_ratio}; the trace does not converge here")
    skipped = c.size - 1 - idx[-1]
    return float(c[idx[-1]] * ratio ** (skipped + 1) / (1 - ratio)) + roundoff, ratio


def _pair(module: FredholmModule, params) -> tuple:
    x = AlgebraElement(c1=1.0, cA=params.q ** 2 - 1)
    T = cocycle_operator(module, x)
    lv, tr, noise = level_traces(T, module.basis)
    contrib = 0.5 * tr
    return lv, contrib, 0.5 * noise


def simple_module(N, params, L_max) -> FredholmModule:
    """``V_N (+) V_{-N}`` with F swapping equal labels and gamma = +1 on V_N."""
    N = HalfInt.of(N)
    h = SumBasis((build_module(N, L_max), build_module(-N, L_max)))
    n = h.components[0].dim
    swap = sp.bmat([[None, sp.identity(n)], [sp.identity(n), None]], format="csr")
    F = bo.BandOperator(h, h, swap, width=0)
    gamma = bo.diagonal(h, np.where(h.component == 0, 1.0, -1.0))
    rep = build_rep_std(None, params, h)
    return FredholmModule(h, F, bo.zero(h), gamma, rep)


def _fit_cutoff(N, params, target=TAIL_TOL) -> HalfInt:
    """Cutoff at which q^(2l) falls well below the target (at least 40)."""
    n = abs(float(HalfInt.of(N)))
    need = np.log(target * 1e-3) / (2 * np.log(params.q))
    L = max(40.0, np.ceil(need + n) + 6)
    return HalfInt.of(L + (n % 1))


def pairing_simple(N, params, L_max=None) -> PairingReport:
    N = HalfInt.of(N)
    if N.twice <= 0:
        raise ValueError("pairing_simple needs N > 0")
    L_max = _fit_cutoff(N, params) if L_max is None else HalfInt.of(L_max)
    mod = simple_module(N, params, L_max)
    lv, contrib, noise = _pair(mod, params)
    tail, ratio = tail_bound(contrib, noise)
    if tail > TAIL_TOL:
        raise TailTooLarge(f"tail bound {tail:.2e} exceeds {TAIL_TOL}; enlarge L_max beyond {L_max}")
    return PairingReport(float(np.sum(contrib)), tail, L_max, -float(N) * 2,
                         {"grading": "+1 on V_N", "normalisation": "1/2 Tr gamma F[F, tr P]",
                          "tail_ratio": ratio}, {"N": N, "q": params.q}, contrib, lv)


def higson_module(N, r, params, L_max, d=(1.0, 1.0)) -> FredholmModule:
    N, r = HalfInt.of(N), HalfInt.of(r)
    h = build_spinor(N, r, L_max)
    D, _ = build_dirac_general(N, r, d[0], d[1], params, h)
    return build_fredholm(D, h, build_grading(h, "down_plus"), build_rep_std(None, params, h))


def pairing_higson(N, r, params, L_max=None, via_double: bool = True) -> PairingReport:
    """Pairing of the (Higson-doubled) module of ``H_{N,r}`` with the projector.

    Grading: +1 on ``V_{N+r}``, -1 on ``V_N``.
    """
    N, r = HalfInt.of(N), HalfInt.of(r)
    if not r.is_integer or r.twice <= 0:
        raise ValueError("r must be a positive integer")
    L_max = _fit_cutoff(matched_level(N, r), params) if L_max is None else HalfInt.of(L_max)
    mod = higson_module(N, r, params, L_max)
    if via_double:
        mod = higson_double(mod)
    lv, contrib, noise = _pair(mod, params)
    tail, ratio = tail_bound(contrib, noise)
    if tail > TAIL_TOL:
        raise TailTooLarge(f"tail bound {tail:.2e} exceeds {TAIL_TOL}; enlarge L_max beyond {L_max}")
    return PairingReport(float(np.sum(contrib)), tail, L_max, pairing_oracle(N, r),
                         {"grading": "+1 on V_N+r", "doubled": via_double, "tail_ratio": ratio},
                         {"N": N, "r": r, "q": params.q}, contrib, lv)


def pairing_oracle(N, r) -> float:
    """The four-case closed form for the pairing, branch chosen by the sign
    conditions on N and N + r exactly as stated.  N = 0 falls in no stated
    branch; it is sent to the N > 0 formula."""
    N, r = HalfInt.of(N), HalfInt.of(r)
    if r.twice <= 0:
        raise ValueError("r must be positive")
    n, rr = float(N), float(r)
    first = -2 * (n + rr - (rr - 1) * (2 * n + rr))
    if N.twice >= 0:
        return first
    M = N + r
    if M >= abs(N):
        return first
    if M.twice > 0:
        return 2 * rr * (rr + 2 * n + 1)
    return 2 * (rr + 1) * (2 * n + rr)


def pairing_closed_form(N, r) -> float:
    """Value the computation produces for every (N, r): ``-r (2N + r + 1)``."""
    n, rr = float(HalfInt.of(N)), float(HalfInt.of(r))
    return -rr * (2 * n + rr + 1)


def pairing_by_levels(N, r, params, L_max) -> float:
    """Independent evaluation from the closed-form diagonal of pi(A).

    Matched levels give ``2 (a_{N+r} - a_N)`` per state, kernel states of
    component ``C`` give ``2 gamma_C a_C`` (and ``2 gamma_C`` for the unit).
    """
    N, r = HalfInt.of(N), HalfInt.of(r)
    M = N + r
    q = params.q
    lm = matched_level(N, r)
    phi1 = 0.0
    phiA = 0.0
    l = min(abs(N), abs(M))
    while l <= HalfInt.of(L_max):
        ms = np.arange(-l.value, l.value + 0.5)
        if l >= lm:
            phiA += 2 * float(np.sum(a_diagonal(l.value, ms, M, q) - a_diagonal(l.value, ms, N, q)))
        else:
            C, g = (N, -1) if abs(N) < abs(M) else (M, 1)
            phi1 += 2 * g * ms.size
            phiA += 2 * g * float(np.sum(a_diagonal(l.value, ms, C, q)))
        l = l + 1
    return 0.5 * phi1 + 0.5 * (q * q - 1) * phiA


def q_zero_indicator(l, m, N) -> int:
    """Limit of the diagonal of pi_N(A) as q -> 0: 1 at the lowest weight m = -l
    and on the whole bottom level l = N when N >= 0, otherwise 0."""
    l, m, N = HalfInt.of(l), HalfInt.of(m), HalfInt.of(N)
    if m == -l:
        return 1
    if N.twice >= 0 and l == N:
        return 1
    return 0


def q_zero_limit_check(N, qs=(0.3, 0.1, 0.03), levels: int = 4) -> VerificationReport:
    N = HalfInt.of(N)
    out = VerificationReport("q-zero-limit", conventions={"peak": "m = -l"})
    for q in qs:
        worst = 0.0
        for j in range(levels):
            l = abs(N) + j
            for k in range(l.twice + 1):
                m = HalfInt(-l.twice + 2 * k)
                v = float(a_diagonal(l.value, m.value, N, q))
                worst = max(worst, abs(v - q_zero_indicator(l, m, N)))
        out.add(f"q={q}", worst, 10 * q, params={"N": N, "q": q})
    return out


# -- export -------------------------------------------------------------------------------

COLUMNS = ["N", "r", "q", "value", "tail", "oracle", "pass"]


def pairing_table_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for rp in reports:
        row = rp.row()
        w.writerow([row["N"], row["r"], f"{row['q']:.6g}", f"{row['value']:.12f}",
                    f"{row['tail']:.3e}", f"{row['oracle']:g}", row["pass"]])
    return buf.getvalue()


def pairing_table_markdown(reports) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    for rp in reports:
        row = rp.row()
        lines.append(f"| {row['N']} | {row['r']} | {row['q']:g} | {row['value']:.10f} | "
                     f"{row['tail']:.2e} | {row['oracle']:g} | {'yes' if row['pass'] else 'no'} |")
    return "\n".join(lines) + "\n"
