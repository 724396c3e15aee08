import csv

import numpy as np
import pytest

from podles import bandop as bo
from podles import dirac
from podles.basis import build_doubled, build_module, build_spinor, interior_window
from podles.qcore import DeformationParams, HalfInt

P = DeformationParams(0.5)


def qn(x, q):
    return (q ** x - q ** -x) / (q - 1 / q)


@pytest.mark.parametrize("N", ["-2", "-1/2", "0", "3/2"])
def test_twisted_operator_is_odd_and_self_adjoint(N):
    b = dirac.make_bundle(N, 1, P, HalfInt.of("20") + HalfInt(HalfInt.of(N).twice % 2))
    assert dirac.check_structure(b).passed
    M = b.D.toarray()
    assert np.allclose(M, M.conj().T)


@pytest.mark.parametrize("N", ["-3/2", "-1", "1/2", "2"])
@pytest.mark.parametrize("q", [0.3, 0.8])
def test_block_spectrum_matches_dense(N, q):
    h = build_spinor(N, 1, 9 + HalfInt.of(N).twice % 2 / 2)
    D = dirac.build_dirac_twisted(N, DeformationParams(q), h)
    spec = dirac.spectrum(D, h)
    dense = np.sort(np.linalg.eigvalsh(D.toarray()))
    assert np.allclose(np.sort(spec.eigenvalues()), dense, atol=1e-10)
    assert spec.kernel_dim == int(np.sum(np.abs(dense) < 1e-9))
    for l, v, n in spec.nonzero():
        n_ = float(HalfInt.of(N))
        assert abs(v) == pytest.approx(np.sqrt(qn(l.value - n_, q) * qn(l.value + n_ + 1, q)), rel=1e-12)
        assert n == l.twice + 1


def test_kernel_dimension_law():
    assert [dirac.kernel_dimension_law(n) for n in ("-2", "-3/2", "-1/2", "0", "1")] == [3, 2, 0, 1, 3]


def test_twisted_needs_r_one():
    with pytest.raises(ValueError):
        dirac.build_dirac_twisted(0, P, build_spinor(0, 2, 10))


def test_general_operator_spectrum_and_self_adjointness():
    h = build_spinor(0, 2, 8)
    D, sa = dirac.build_dirac_general(0, 2, 1, 1, P, h)
    assert sa
    spec = dirac.spectrum(D, h)
    for l, v, n in spec.nonzero():
        assert abs(v) == pytest.approx(P.q ** -l.value)
    assert spec.kernel_dim == 1 + 3  # V_0 levels 0 and 1 have no partner in V_2
    _, sa = dirac.build_dirac_general(0, 2, 1, 2j, P, h)
    assert not sa


def test_spectrum_rejects_non_paired_operators():
    h = build_spinor(0, 1, 5)
    with pytest.raises(ValueError):
        dirac.spectrum(bo.identity(h), h)


def test_spectrum_csv(tmp_path):
    h = build_spinor("1/2", 1, "11/2")
    spec = dirac.spectrum(dirac.build_dirac_twisted("1/2", P, h), h)
    path = tmp_path / "s.csv"
    spec.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["level", "eigenvalue", "multiplicity"]
    assert sum(int(r[2]) for r in rows[1:]) == h.dim


@pytest.mark.parametrize("N,sign", [("0", 1), ("1", 1), ("-1/2", -1), ("3/2", -1)])
def test_reality_signs(N, sign):
    b = dirac.make_bundle(N, 1, P, 10 + HalfInt.of(N).twice % 2 / 2)
    assert dirac.reality_sign(b.J) == sign
    assert dirac.jd_sign(b) in (1, -1)
    assert dirac.check_commutant(b).passed
    assert dirac.check_order_one(b, "exact").passed


def test_phase_controls_break_the_commutant():
    b = dirac.make_bundle(1, 1, P, 10, phase="level")
    assert not dirac.check_commutant(b).passed


def test_reality_requires_doubled_basis():
    with pytest.raises(TypeError):
        dirac.build_reality(0, 1, build_spinor(0, 1, 5))


def test_grading_orientations():
    d = build_doubled("1/2", 1, "9/2")
    up = dirac.build_grading(d).matrix.diagonal()
    assert np.array_equal(up, -dirac.build_grading(d, "down_plus").matrix.diagonal())
    assert np.all(up[d.component == 0] == 1)
    with pytest.raises(ValueError):
        dirac.build_grading(d, "sideways")


@pytest.mark.parametrize("flavor,N,r", [("twisted", "1/2", 1), ("general", "-1", 2), ("general", "0", 3)])
def test_precise_commutator_matches_naive_at_small_cutoff(flavor, N, r):
    b = dirac.make_bundle(N, r, P, 8, flavor, doubled=False)
    for g, X in b.rep.gens():
        naive = bo.commutator(b.D, X).toarray()
        exact = dirac.precise_commutator(b, g).toarray()
        scale = np.max(np.abs(naive)) + 1
        assert np.max(np.abs(naive - exact)) <= 1e-11 * scale


def test_commutator_norm_against_dense_svd():
    b = dirac.make_bundle("1/2", 1, P, "21/2", "general", doubled=False)
    norms = dirac.commutator_norms(b)
    for g, X in b.rep.gens():
        C = dirac.precise_commutator(b, g)
        w = interior_window(b.basis, max(C.width, 1))
        assert norms[g].value == pytest.approx(np.linalg.norm(C.toarray()[:, w], 2), rel=1e-9)


def test_generalized_commutators_stabilise():
    make = lambda L: dirac.make_bundle("1/2", 2, DeformationParams(0.3), L, "general", doubled=False)
    rep = dirac.check_bounded_commutators(make, ["41/2", "61/2", "81/2"])
    assert rep.passed, [(c.name, c.detail["norms"]) for c in rep.checks]


def test_order_one_up_to_compacts_but_not_exactly():
    b = dirac.make_bundle(0, 2, P, 40, "general")
    assert dirac.check_order_one(b, "up_to_Kq").passed
    assert not dirac.check_order_one(b, "exact").passed


def test_compact_perturbation():
    rep = dirac.check_compact_perturbation("1/2", P, "81/2")
    assert rep.passed
    l, delta = dirac.perturbation_profile(1, DeformationParams(0.3), 30)
    c = 0.3 ** -0.5 / (1 / 0.3 - 0.3)
    direct = np.abs(np.sqrt(qn(l - 1, 0.3) * qn(l + 2, 0.3)) - c * 0.3 ** -l)
    small = l < 10  # the direct difference is still accurate here
    assert np.allclose(delta[small], direct[small], rtol=1e-6)
    with pytest.raises(ValueError):
        dirac.check_compact_perturbation(0, DeformationParams(0.97))


def test_documented_general_spectra():
    h = build_spinor(0, 1, 8)
    D, sa = dirac.build_dirac_general(0, 1, 1, 1, P, h)
    spec = dirac.spectrum(D, h)
    assert spec.kernel_dim == 1
    assert all(abs(v) == pytest.approx(P.q ** -l.value) and n == l.twice + 1 for l, v, n in spec.nonzero())
    _, sa = dirac.build_dirac_general(0, 1, 1j, 1j, P, h)
    assert not sa
    h = build_spinor("-1/2", 1, "17/2")
    spec = dirac.spectrum(dirac.build_dirac_general("-1/2", 1, 2, 2, P, h)[0], h)
    assert all(abs(v) == pytest.approx(2 * P.q ** -l.value) for l, v, n in spec.nonzero())


def test_documented_twisted_spectrum_rows():
    h = build_spinor("-1/2", 1, "9/2")
    spec = dirac.spectrum(dirac.build_dirac_twisted("-1/2", P, h), h)
    assert spec.kernel_dim == 0
    first = [(v, n) for l, v, n in spec.rows if l == HalfInt(1)]
    assert sorted(first) == [(-1.0, 2), (1.0, 2)]
    h = build_spinor(1, 1, 6)
    assert dirac.spectrum(dirac.build_dirac_twisted(1, P, h), h).kernel_dim == 3
    h = build_spinor(-1, 1, 6)
    assert dirac.spectrum(dirac.build_dirac_twisted(-1, P, h), h).kernel_dim == 1


@pytest.mark.parametrize("flavor", ["twisted", "general"])
def test_spectrum_is_symmetric(flavor):
    h = build_spinor("3/2", 1, "19/2")
    D = dirac.build_dirac_twisted("3/2", P, h) if flavor == "twisted" \
        else dirac.build_dirac_general("3/2", 1, 1 + 1j, 1 - 1j, P, h)[0]
    ev = dirac.spectrum(D, h).eigenvalues()
    assert np.allclose(np.sort(ev), np.sort(-ev))


def test_twisted_and_general_commutators_stabilise():
    make = lambda L: dirac.make_bundle("-1/2", 1, P, L, "twisted", doubled=False)
    assert dirac.check_bounded_commutators(make, ["41/2", "61/2", "81/2"]).passed
    make = lambda L: dirac.make_bundle(0, 1, P, L, "general", doubled=False)
    assert dirac.check_bounded_commutators(make, [20, 30, 40]).passed


def test_square_of_D_has_growing_commutators():
    make = lambda L: dirac.make_bundle(0, 1, P, L, "general", doubled=False)
    rep = dirac.check_bounded_commutators(make, [10, 15, 20], power=2)
    row = next(c for c in rep.checks if c.name == "||[D,B]||")
    assert not row.passed
    norms = row.detail["norms"]
    assert norms[0] < norms[1] < norms[2] and norms[2] / norms[1] > 2


def test_dropping_the_phase_is_a_diagonal_conjugation():
    # the phase i^(2m) is U = diag((-1)^m) up to J, and U Y U^-1 = +-Y for every
    # generator, so the commutant cannot see it; only J^2 at half-integer N does
    for N in (1, "1/2"):
        with_phase = dirac.make_bundle(N, 1, DeformationParams(0.3), 10 + HalfInt.of(N).twice % 2 / 2)
        without = dirac.make_bundle(N, 1, DeformationParams(0.3), 10 + HalfInt.of(N).twice % 2 / 2, phase="one")
        assert dirac.check_commutant(without).worst() == pytest.approx(dirac.check_commutant(with_phase).worst(), abs=1e-15)
    assert dirac.reality_sign(with_phase.J) == -1
    assert dirac.reality_sign(without.J) == 1


def test_commutant_dense_oracle():
    b = dirac.make_bundle(1, 1, DeformationParams(0.3), 8)
    J = b.J.toarray()
    Jinv = np.linalg.inv(J)  # J is antilinear: J X J^-1 acts as J conj(X) J^-1
    w = interior_window(b.basis, 1)
    for _, X in b.rep.gens():
        JXJ = J @ X.toarray().conj() @ Jinv.conj().conj()
        for _, Y in b.rep.gens():
            R = JXJ @ Y.toarray() - Y.toarray() @ JXJ
            assert np.max(np.abs(R[:, w])) <= 1e-11


@pytest.mark.parametrize("N,q", [("-1/2", 0.5), ("2", 0.8)])
def test_documented_compact_perturbations(N, q):
    p = DeformationParams(q)
    rep = dirac.check_compact_perturbation(N, p, 60 + HalfInt.of(N).twice % 2 / 2)
    assert rep.passed
    assert rep.checks[0].value == pytest.approx(np.log(q), rel=0.1)
