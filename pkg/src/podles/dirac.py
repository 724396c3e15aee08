"""Dirac operators, grading and real structure on spinor spaces, plus the
spectral-triple axiom checks.

Block layouts: a spinor space ``H_{N,r}`` is ``[V_N, V_{N+r}]``; its real
doubling is ``[V_N, V_{N+r}, V_{-N-r}, V_{-N}]``.  The reality operator pairs
components 0 with 3 and 1 with 2.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import bandop as bo
from . import standard
from .basis import (DoubledBasis, SpinorBasis, build_doubled, build_module, build_spinor,
                    default_cutoff, interior_window)
from .qcore import DeformationParams, HalfInt, qnumber
from .report import VerificationReport
from .standard import GENERATORS, Representation, build_rep_approx, build_rep_std

log = logging.getLogger(__name__)


def _spinors(space):
    if isinstance(space, DoubledBasis):
        return [space.left, space.right]
    if isinstance(space, SpinorBasis):
        return [space]
    raise TypeError(f"expected a spinor or doubled basis, got {space!r}")


def paired_operator(space, coefficients) -> bo.BandOperator:
    """Component-swapping, (l, m)-diagonal operator.

    ``coefficients(s, spinor)`` returns two vectorised rules ``(down_from_up,
    up_from_down)`` for spinor ``s`` (0 = left, 1 = right).  Rules must vanish
    on levels present in only one component.
    """
    terms = []
    for s, spinor in enumerate(_spinors(space)):
        du, ud = coefficients(s, spinor)
        terms.append((2 * s, 2 * s + 1, 0, 0, du))
        terms.append((2 * s + 1, 2 * s, 0, 0, ud))
    D = bo.from_terms(space, space, terms, closed=True)
    return bo.BandOperator(space, space, D.matrix, False, 0)


def twisted_coefficient(K, params):
    """``sqrt([l-K][l+K+1])`` as a vectorised rule."""
    q, k = params.q, float(HalfInt.of(K))
    return lambda l, m: np.sqrt(np.maximum(qnumber(l - k, q) * qnumber(l + k + 1, q), 0.0))


def build_dirac_twisted(N, params, spinor_basis) -> bo.BandOperator:
    """Twisted Dirac operator; on a doubled basis the right half carries D_{-N-1}."""
    for sp_ in _spinors(spinor_basis):
        if sp_.r != HalfInt(2):
            raise ValueError("the twisted Dirac operator needs r = 1")

    def coeffs(s, spinor):
        c = twisted_coefficient(spinor.N, params)
        return c, c

    return paired_operator(spinor_basis, coeffs)


def matched_level(N, r) -> HalfInt:
    N, r = HalfInt.of(N), HalfInt.of(r)
    return max(abs(N), abs(N + r))


def build_dirac_general(N, r, d_N, d_Nr, params, spinor_basis):
    """Quasi-Dirac operator with coefficients ``d q^-l`` on matched levels.

    Returns ``(D, self_adjoint)``.  On a doubled basis the right half uses
    ``conj(d_{N+r})`` on ``V_{-N-r} -> V_{-N}`` and ``conj(d_N)`` back, which
    is the choice that makes ``J`` commute with the total operator.
    """
    q = params.q
    lm = float(matched_level(N, r))
    step = lambda d: (lambda l, m: np.where(l >= lm - 1e-9, d * q ** -l, 0.0))
    d_N, d_Nr = complex(d_N), complex(d_Nr)

    def coeffs(s, spinor):
        if s == 0:
            return step(d_N), step(d_Nr)
        return step(np.conj(d_Nr)), step(np.conj(d_N))

    D = paired_operator(spinor_basis, coeffs)
    sa = bool(np.isclose(np.conj(d_N), d_Nr, rtol=0, atol=1e-15))
    if not sa:
        log.info("generalized Dirac operator with d_N=%s, d_N+r=%s is not self-adjoint", d_N, d_Nr)
    return D, sa


def build_grading(space, orientation: str = "up_plus") -> bo.BandOperator:
    """Diagonal +-1: ``up_plus`` puts +1 on V_N, ``down_plus`` on V_{N+r}."""
    if orientation not in ("up_plus", "down_plus"):
        raise ValueError(f"unknown orientation {orientation!r}")
    sign = 1.0 if orientation == "up_plus" else -1.0
    vals = np.where(space.component % 2 == 0, sign, -sign)
    return bo.diagonal(space, vals)


_J_PAIRS = {0: 3, 3: 0, 1: 2, 2: 1}


def build_reality(N, r, doubled_basis: DoubledBasis, phase: str = "i2m") -> bo.BandOperator:
    """Antiunitary ``J|l,m> = i^(2m) |l,-m>`` between paired components.

    ``phase`` selects the phase factor: ``i2m`` (the real structure),
    ``one`` (drop the phase) or ``level`` (extra ``(-1)^floor(l)``, a
    level-dependent control that must break the commutant).
    """
    if not isinstance(doubled_basis, DoubledBasis):
        raise TypeError("the real structure lives on a doubled basis")
    ph = {
        "i2m": lambda l, m: 1j ** np.rint(2 * m),
        "one": lambda l, m: np.ones_like(m, dtype=complex),
        "level": lambda l, m: 1j ** np.rint(2 * m) * (-1.0) ** np.floor(l),
    }[phase]
    entries = [(c, t, lambda l2, m2: (l2, -m2), ph) for c, t in _J_PAIRS.items()]
    return bo.from_label_map(doubled_basis, doubled_basis, entries, antilinear=True)


@dataclass(eq=False)
class SpectralTripleBundle:
    basis: object
    rep: Representation
    D: bo.BandOperator
    gamma: bo.BandOperator
    J: bo.BandOperator | None = None
    meta: dict = field(default_factory=dict)
    approx: Representation | None = None

    @property
    def params(self) -> DeformationParams:
        return self.meta["params"]


def make_bundle(N, r=1, params=None, L_max=None, flavor="twisted", doubled=True,
                d=(1.0, 1.0), orientation="up_plus", phase="i2m") -> SpectralTripleBundle:
    """Assemble basis, representation, Dirac operator, grading and (optionally) J."""
    N, r = HalfInt.of(N), HalfInt.of(r)
    params = params or DeformationParams(0.5)
    L_max = default_cutoff(N) if L_max is None else HalfInt.of(L_max)
    space = build_doubled(N, r, L_max) if doubled else build_spinor(N, r, L_max)
    rep = build_rep_std(None, params, space)
    if flavor == "twisted":
        D, sa = build_dirac_twisted(N, params, space), True
    elif flavor in ("general", "generalized"):
        D, sa = build_dirac_general(N, r, d[0], d[1], params, space)
    else:
        raise ValueError(f"unknown flavor {flavor!r}")
    J = build_reality(N, r, space, phase) if doubled else None
    meta = {"N": N, "r": r, "params": params, "q": params.q, "flavor": flavor,
            "orientation": orientation, "self_adjoint": sa, "L_max": space.cutoff,
            "phase": phase, "d": tuple(complex(x) for x in d)}
    return SpectralTripleBundle(space, rep, D, build_grading(space, orientation), J, meta)


# -- axiom checks ---------------------------------------------------------------

def check_structure(bundle: SpectralTripleBundle) -> VerificationReport:
    """gamma^2 = 1, {D, gamma} = 0, [gamma, pi(x)] = 0 and, with J, J gamma = -gamma J."""
    out = VerificationReport("structure", conventions={"orientation": bundle.meta["orientation"]})
    g, D = bundle.gamma, bundle.D
    I = bo.identity(bundle.basis)
    out.add("gamma^2=1", (g @ g - I).max_entry(), 0.0)
    out.add("{D,gamma}=0", bo.anticommutator(D, g).max_entry(), 0.0)
    for name, X in bundle.rep.gens():
        out.add(f"[gamma,{name}]=0", bo.commutator(g, X).max_entry(), 0.0)
    if bundle.J is not None:
        J = bundle.J
        out.add("J gamma=-gamma J", (J @ g + g @ J).max_entry(), 0.0)
        out.add("J antiunitary", (J @ bo.unitary_inverse(J) - I).max_entry(), 1e-15)
    return out


def reality_sign(J: bo.BandOperator) -> int:
    """The sign eps in J^2 = eps; raises if J^2 is not +-1."""
    J2 = J @ J
    I = bo.identity(J.domain)
    for s in (1, -1):
        if (J2 - s * I).max_entry() <= 1e-14:
            return s
    raise ValueError("J^2 is not +-1")


def jd_sign(bundle: SpectralTripleBundle) -> int | None:
    """Measured ``eps'`` with ``J D = eps' D J``, or None if neither sign holds."""
    J, D = bundle.J, bundle.D
    for s in (1, -1):
        if (J @ D - s * (D @ J)).scaled_max() <= 1e-13:
            return s
    return None


def conjugated(bundle, X: bo.BandOperator) -> bo.BandOperator:
    """``J X J^-1`` (a linear operator)."""
    J = bundle.J
    return J @ X @ bo.unitary_inverse(J)


def check_commutant(bundle: SpectralTripleBundle, tol=1e-11) -> VerificationReport:
    out = VerificationReport("commutant", conventions={"J_phase": bundle.meta["phase"]})
    for nx, X in bundle.rep.gens():
        JXJ = conjugated(bundle, X)
        for ny, Y in bundle.rep.gens():
            R = bo.commutator(JXJ, Y)
            w = interior_window(bundle.basis, max(R.width, 1))
            out.add(f"[J{nx}J^-1,{ny}]", R.scaled_max(w), tol, params=_pm(bundle))
    return out


def _pm(bundle):
    m = bundle.meta
    return {"N": m["N"], "r": m["r"], "q": m["q"], "flavor": m["flavor"]}


def order_one_residuals(bundle: SpectralTripleBundle) -> dict:
    out = {}
    for nx, X in bundle.rep.gens():
        JXJ = conjugated(bundle, X)
        for ny, Y in bundle.rep.gens():
            out[(nx, ny)] = bo.commutator(JXJ, bo.commutator(bundle.D, Y))
    return out


def check_order_one(bundle: SpectralTripleBundle, mode: str = "exact", tol=1e-10) -> VerificationReport:
    """``[J x J^-1, [D, y]]``: exact (scaled entries) or up to K_q (decay class)."""
    if mode not in ("exact", "up_to_Kq"):
        raise ValueError(f"unknown mode {mode!r}")
    out = VerificationReport(f"order-one-{mode}", conventions={"J_phase": bundle.meta["phase"]})
    for (nx, ny), R in order_one_residuals(bundle).items():
        name = f"[J{nx}J^-1,[D,{ny}]]"
        if mode == "exact":
            w = interior_window(bundle.basis, max(R.width, 1))
            out.add(name, R.scaled_max(w), tol, params=_pm(bundle))
        else:
            prof = bo.decay_profile(R)
            label, rho = bo.classify_kq(prof, bundle.params)
            out.add(name, rho, None, passed=label == "in_Kq", params=_pm(bundle), label=label)
    return out


@lru_cache(maxsize=None)
def _mp_level(name, shift, N2, l2, q, branch) -> float:
    return standard.mp_level_coefficient((name, shift), HalfInt(N2), l2 / 2.0, q, branch)


def _mp_delta(bundle, s):
    """Dirac coefficients of spinor ``s`` as mpmath functions ``(down<-up, up<-down)``."""
    import mpmath as mp

    m = bundle.meta
    q = mp.mpf(m["q"])
    spinor = _spinors(bundle.basis)[s]
    K = float(spinor.N)
    qn = lambda x: (q ** x - q ** -x) / (q - 1 / q)
    if m["flavor"] == "twisted":
        f = lambda l: mp.sqrt(max(qn(l - K) * qn(l + K + 1), 0))
        return f, f
    lm = float(matched_level(m["N"], m["r"]))
    dN, dNr = m["d"]
    du, ud = (dN, dNr) if s == 0 else (np.conj(dNr), np.conj(dN))
    step = lambda d: (lambda l: mp.mpc(d) * q ** -l if l >= lm - 1e-9 else mp.mpf(0))
    return step(du), step(ud)


def precise_commutator(bundle: SpectralTripleBundle, gen: str) -> bo.BandOperator:
    """``[D, pi(gen)]`` with each cancelling level combination formed in mpmath.

    D grows like q^-l while the representations of neighbouring modules
    agree to O(q^l), so the naive commutator loses all digits at large l.
    Every entry factors into an N-independent (l, m) part times
    ``delta(l') rho_up(l) - rho_down(l) delta(l)``; only that scalar needs
    extra precision.  The A diagonal uses the exact difference formula.
    """
    import mpmath as mp

    m = bundle.meta
    if m["flavor"] not in ("twisted", "general", "generalized") or bundle.rep.kind != "exact":
        raise ValueError("precise commutators exist for the standard-sphere Dirac operators only")
    q = m["q"]
    basis = bundle.basis
    rows, cols, vals = [], [], []
    width = 0
    for s, spinor in enumerate(_spinors(basis)):
        off = int(basis.offsets[2 * s])
        mods = (spinor.up, spinor.down)
        offs = (off, off + spinor.up.dim)
        labels = (spinor.up.N, spinor.down.N)
        branches = tuple(standard.select_branch(K, q) for K in labels)
        delta = _mp_delta(bundle, s)  # delta[0]: down<-up, delta[1]: up<-down
        for src in (0, 1):
            dst = 1 - src
            dlt = delta[src]
            sb, tb = mods[src], mods[dst]
            for dl, dm, common, (name, shift) in standard.std_factors(q)[gen]:
                width = max(width, abs(dl))
                l2, m2 = sb._l2, sb._m2
                tgt = tb.lookup(l2 + 2 * dl, m2 + 2 * dm)
                ok = tgt >= 0
                if not ok.any():
                    continue
                l, mm = l2[ok] / 2.0, m2[ok] / 2.0
                if name == "a":
                    d = np.array([complex(dlt(float(x))) for x in l])
                    # delta(l) (a_src - a_dst): D maps src to dst at the same level
                    c = d * standard.a_diagonal_difference(l, mm, labels[src], labels[dst], q)
                else:
                    cache = {}
                    for x2 in np.unique(l2[ok]):
                        x = x2 / 2.0
                        with mp.workdps(50):
                            r_src = _mp_level(name, shift, labels[src].twice, int(x2), q, branches[src]) \
                                if x >= abs(float(labels[src])) else 0
                            r_dst = _mp_level(name, shift, labels[dst].twice, int(x2), q, branches[dst]) \
                                if x >= abs(float(labels[dst])) else 0
                            cache[x2] = complex(dlt(x + dl) * r_src - r_dst * dlt(x))
                    c = np.array([cache[x2] for x2 in l2[ok]]) * common(l, mm)
                rows.append(tgt[ok] + offs[dst])
                cols.append(np.flatnonzero(ok) + offs[src])
                vals.append(c)
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    keep = vals != 0
    M = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(basis.dim, basis.dim)).tocsr()
    M.sum_duplicates()
    return bo.BandOperator(basis, basis, M, False, width, abs(M))


def commutator_norms(bundle: SpectralTripleBundle, power: int = 1, precise: bool = True) -> dict:
    """``||[D^power, pi(x)]||`` on the interior window.

    For the standard-sphere operators with ``power=1`` the commutator is
    assembled by :func:`precise_commutator`; otherwise by plain products.
    """
    exact_path = precise and power == 1 and bundle.rep.kind == "exact" \
        and bundle.meta["flavor"] in ("twisted", "general", "generalized")
    D = bundle.D
    for _ in range(power - 1):
        D = D @ bundle.D
    out = {}
    for name, X in bundle.rep.gens():
        C = precise_commutator(bundle, name) if exact_path else bo.commutator(D, X)
        w = interior_window(bundle.basis, max(C.width, 1))
        out[name] = bo.operator_norm(C, w)
    return out


def check_bounded_commutators(make, L_list, tol=1e-6, power: int = 1) -> VerificationReport:
    """Norms of ``[D^power, pi(x)]`` at increasing cutoffs must stabilise.

    ``make(L)`` builds the bundle at cutoff ``L``.  Passes per generator when
    the last two norms differ by at most ``tol`` relative.
    """
    L_list = list(L_list)
    if len(L_list) < 3:
        raise ValueError("need at least three cutoffs")
    seq = {g: [] for g in GENERATORS}
    last = None
    for L in L_list:
        last = make(L)
        for g, est in commutator_norms(last, power).items():
            seq[g].append(est)
    out = VerificationReport("bounded-commutators", conventions={"power": power})
    approx = build_rep_approx(None, last.params, last.basis)
    for g in GENERATORS:
        vals = [e.value for e in seq[g]]
        rel = abs(vals[-1] - vals[-2]) / max(abs(vals[-1]), 1e-300)
        tail = bo.decay_profile(bo.commutator(last.D, last.rep[g] - approx[g]))
        out.add(f"||[D,{g}]||", rel, tol, params=_pm(last), norms=vals,
                converged=all(e.converged for e in seq[g]), L=[str(HalfInt.of(L)) for L in L_list],
                remainder_rate=tail.rate)
    return out


# -- spectra ---------------------------------------------------------------------

@dataclass
class SpectrumReport:
    """Eigenvalues with multiplicities, per level, and the kernel dimension."""

    rows: list  # (level, eigenvalue, multiplicity)
    kernel_dim: int

    def eigenvalues(self) -> np.ndarray:
        return np.repeat([r[1] for r in self.rows], [r[2] for r in self.rows])

    def nonzero(self):
        return [r for r in self.rows if r[1] != 0.0]

    def to_csv(self, path) -> None:
        write_spectrum_csv(self, path)


def _blocks(D: bo.BandOperator, spinor: SpinorBasis, offset: int):
    """Paired (l, m) blocks of one spinor: returns labels and both coefficients."""
    up, down = spinor.up, spinor.down
    iu = np.arange(up.dim)
    jd = down.lookup(up._l2, up._m2)
    M = D.matrix.tocsr()
    a = np.zeros(up.dim, complex)  # down <- up
    b = np.zeros(up.dim, complex)  # up <- down
    has = jd >= 0
    ro_u = offset + iu[has]
    ro_d = offset + up.dim + jd[has]
    a[has] = np.asarray(M[ro_d, ro_u]).ravel()
    b[has] = np.asarray(M[ro_u, ro_d]).ravel()
    lonely_down = np.setdiff1d(np.arange(down.dim), jd[has])
    return up._l2, up._m2, has, a, b, down._l2[lonely_down]


def spectrum(D: bo.BandOperator, basis) -> SpectrumReport:
    """Closed-form spectrum of a component-paired, (l, m)-diagonal operator."""
    M = D.matrix.tocoo()
    comp, l2, m2 = basis.component, basis.l2, basis.m2
    ok = (comp[M.row] // 2 == comp[M.col] // 2) & (comp[M.row] != comp[M.col]) \
        & (l2[M.row] == l2[M.col]) & (m2[M.row] == m2[M.col])
    if not np.all(ok):
        raise ValueError("operator is not component-paired and (l,m)-diagonal")
    rows = {}
    kernel = 0
    for s, spinor in enumerate(_spinors(basis)):
        L2, _, has, a, b, lonely = _blocks(D, spinor, int(basis.offsets[2 * s]))
        if not np.allclose(a[has], np.conj(b[has]), rtol=1e-13, atol=1e-300):
            raise ValueError("spectrum() needs a self-adjoint operator")
        lam = np.abs(a)
        zero = has & (lam == 0)
        kernel += int(np.sum(~has)) + 2 * int(np.sum(zero)) + int(lonely.size)
        for L, v in zip(L2[has & ~zero], lam[has & ~zero]):
            # the rounded value only groups multiplicities; the exact one is kept
            key = float(f"{v:.12g}")
            for sgn in (1.0, -1.0):
                k = (int(L), sgn * key)
                val, n = rows.get(k, (sgn * float(v), 0))
                rows[k] = (val, n + 1)
        for L in list(L2[~has]) + list(lonely) + list(np.repeat(L2[zero], 2)):
            val, n = rows.get((int(L), 0.0), (0.0, 0))
            rows[(int(L), 0.0)] = (0.0, n + 1)
    out = [(HalfInt(k[0]), v, n) for k, (v, n) in sorted(rows.items())]
    return SpectrumReport(out, kernel)


def write_spectrum_csv(report: SpectrumReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "eigenvalue", "multiplicity"])
        for l, v, n in report.rows:
            w.writerow([str(l), f"{v:.15g}", n])


def twisted_eigenvalue(l, N, params) -> float:
    return float(np.sqrt(qnumber(l - float(N), params.q) * qnumber(l + float(N) + 1, params.q)))


def kernel_dimension_law(N) -> int:
    N = HalfInt.of(N)
    return N.twice + 1 if N.twice >= 0 else abs(N.twice) - 1


# -- compact perturbation ------------------------------------------------------------

def perturbation_profile(N, params, L_max) -> tuple[np.ndarray, np.ndarray]:
    """Levels and ``delta_l = |sqrt([l-N][l+N+1]) - c q^-l|``, ``c = q^-1/2/(q^-1 - q)``.

    Evaluated as ``|q^(2l+1) - q^(2N+1) - q^(-2N-1)| / ((q^-1-q)^2 (sqrt(X) + c q^-l))``
    so that no digits are lost to the cancellation of the leading terms.
    """
    q, n = params.q, float(HalfInt.of(N))
    start = max(abs(n), abs(n + 1))
    l = start + np.arange(int(round(float(HalfInt.of(L_max)) - start)) + 1)
    X = qnumber(l - n, q) * qnumber(l + n + 1, q)
    keep = X > 0
    l, X = l[keep], X[keep]
    g = 1 / q - q
    c = q ** -0.5 / g
    delta = np.abs(q ** (2 * l + 1) - q ** (2 * n + 1) - q ** (-2 * n - 1)) / (g * g * (np.sqrt(X) + c * q ** -l))
    return l, delta


def check_compact_perturbation(N, params, L_max=None) -> VerificationReport:
    if params.q > 0.95:
        raise ValueError("compact-perturbation check refuses q > 0.95: c = q^-1/2/(q^-1-q) blows up")
    N = HalfInt.of(N)
    L_max = default_cutoff(N) if L_max is None else L_max
    l, delta = perturbation_profile(N, params, L_max)
    prof = bo.level_profile(l, delta)
    label, rho = bo.classify_kq(prof, params)
    upper = delta[delta.size // 2:]
    mono = bool(np.all(np.diff(upper) < 0))
    out = VerificationReport("compact-perturbation")
    out.add("delta_l in K_q", rho, None, passed=label == "in_Kq" and mono,
            params={"N": N, "q": params.q}, monotone_tail=mono, label=label,
            rate_over_lnq=rho / np.log(params.q), last=float(delta[-1]))
    return out
