import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from podles import bandop as bo
from podles.basis import build_module, interior_window
from podles.qcore import DeformationParams
from podles.standard import build_rep_std


def random_band(basis, seed, width=1, anti=False):
    rng = np.random.default_rng(seed)
    terms = []
    for dl in range(-width, width + 1):
        for dm in (-1, 0, 1):
            c = rng.standard_normal() + 1j * rng.standard_normal()
            terms.append((0, 0, dl, dm, lambda l, m, c=c: c * (1 + 0.1 * l + 0.05 * m)))
    return bo.from_terms(basis, basis, terms, antilinear=anti, closed=False)


def test_compose_matches_dense_product():
    b = build_module(0, 8)
    A, B = random_band(b, 1), random_band(b, 2)
    assert np.allclose((A @ B).toarray(), A.toarray() @ B.toarray())
    assert (A @ B).width == 2


def test_antilinear_composition_conjugates():
    b = build_module("1/2", "13/2")
    J = random_band(b, 3, anti=True)
    X = random_band(b, 4)
    JX = J @ X
    assert JX.antilinear
    assert np.allclose(JX.toarray(), J.toarray() @ X.toarray().conj())
    assert not (J @ J).antilinear


def test_adjoint_and_unitary_inverse():
    b = build_module(1, 7)
    A = random_band(b, 5)
    assert np.allclose(bo.adjoint(A).toarray(), A.toarray().conj().T)
    with pytest.raises(ValueError):
        bo.adjoint(random_band(b, 5, anti=True))
    ph = np.exp(1j * np.arange(b.dim))
    U = bo.diagonal(b, ph)
    assert np.allclose((U @ bo.unitary_inverse(U)).toarray(), np.eye(b.dim))


def test_commutator_of_diagonals_vanishes():
    b = build_module(0, 6)
    D1, D2 = bo.diagonal(b, np.arange(b.dim)), bo.diagonal(b, np.sin(np.arange(b.dim)))
    assert bo.commutator(D1, D2).max_entry() == 0.0
    assert np.allclose(bo.anticommutator(D1, D2).toarray(), 2 * D1.toarray() @ D2.toarray())


def test_mismatched_bases_raise():
    A = bo.identity(build_module(0, 4))
    B = bo.identity(build_module(0, 5))
    with pytest.raises(bo.BasisMismatch):
        A + B
    with pytest.raises(bo.BasisMismatch):
        A @ B


def test_closed_rules_refuse_escaping_labels():
    b = build_module(1, 5)
    with pytest.raises(ValueError, match="outside the target"):
        bo.from_terms(b, b, [(0, 0, -1, 0, lambda l, m: np.ones_like(l))])
    T = bo.from_terms(b, b, [(0, 0, -1, 0, lambda l, m: np.ones_like(l))], closed=False)
    # level 1 has nowhere to go; level l keeps the 2l - 1 states with |m| < l
    assert T.matrix.nnz == sum(2 * l - 1 for l in range(2, 6))


def test_scaled_max_measures_against_scale():
    b = build_module(0, 4)
    big = bo.diagonal(b, np.full(b.dim, 1e8))
    R = big - big
    assert R.scaled_max() == 0.0
    R2 = big - bo.diagonal(b, np.full(b.dim, 1e8 - 1))
    assert R2.scaled_max() == pytest.approx(1 / 2e8, rel=1e-6)


@pytest.mark.parametrize("method", ["blocks", "power"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_operator_norm_against_svd(method, seed):
    b = build_module("1/2", "21/2")
    A = random_band(b, seed)
    est = bo.operator_norm(A, method=method, tol=1e-13)
    ref = np.linalg.norm(A.toarray(), 2)
    assert est.converged
    assert est.value == pytest.approx(ref, rel=1e-6)


def test_operator_norm_windowed_and_trivial():
    b = build_module(0, 10)
    A = random_band(b, 7)
    w = np.arange(b.dim // 2)
    ref = np.linalg.norm(A.toarray()[:, w], 2)
    assert bo.operator_norm(A, w).value == pytest.approx(ref, rel=1e-10)
    assert bo.operator_norm(bo.zero(b)).value == 0.0
    with pytest.raises(ValueError):
        bo.operator_norm(A, method="lanczos")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=30))
def test_norm_of_diagonal_is_max_abs(vals):
    b = build_module(0, 5)
    v = np.resize(np.asarray(vals), b.dim)
    assert bo.operator_norm(bo.diagonal(b, v)).value == pytest.approx(np.max(np.abs(v)), abs=1e-12)


def geometric(b, ratio):
    return bo.diagonal(b, ratio ** b.levels)


@pytest.mark.parametrize("q", [0.3, 0.5, 0.8])
def test_classify_decaying_bounded_growing(q):
    p = DeformationParams(q)
    b = build_module(0, 40)
    lab, rho = bo.classify_kq(bo.decay_profile(geometric(b, q ** 2)), p)
    assert lab == "in_Kq" and rho == pytest.approx(2 * np.log(q), rel=1e-6)
    lab, rho = bo.classify_kq(bo.decay_profile(geometric(b, 1.0)), p)
    assert lab == "bounded_not_Kq" and abs(rho) < 1e-12
    lab, _ = bo.classify_kq(bo.decay_profile(geometric(b, 1.2)), p)
    assert lab == "growing"
    lab, rho = bo.classify_kq(bo.decay_profile(bo.zero(b)), p)
    assert lab == "in_Kq" and rho == float("-inf")


def test_classify_needs_levels():
    b = build_module(0, 5)
    with pytest.raises(bo.InsufficientLevels):
        bo.classify_kq(bo.decay_profile(geometric(b, 0.9)), DeformationParams(0.5))


def test_decay_profile_ignores_roundoff_entries():
    b = build_module(0, 30)
    big = bo.diagonal(b, np.full(b.dim, 1.0))
    noisy = (big + bo.diagonal(b, 1e-15 * np.ones(b.dim))) - big
    prof = bo.decay_profile(noisy)
    assert prof.vanishes


def test_level_profile_fit():
    lv = np.arange(20.0)
    prof = bo.level_profile(lv, 3 * np.exp(-0.7 * lv))
    assert prof.rate == pytest.approx(-0.7)
    assert prof.n_trusted == 20


def test_dump_and_load_roundtrip(tmp_path):
    b = build_module("1/2", "9/2")
    A = random_band(b, 11, anti=True)
    path = tmp_path / "A.txt"
    bo.dump_matrix(A, path)
    D, anti = bo.load_matrix(path)
    assert anti
    assert np.array_equal(D, A.toarray())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000), st.integers(1, 2))
def test_adjoint_reverses_products(s1, s2, width):
    b = build_module("1/2", "15/2")
    A, B = random_band(b, s1, width), random_band(b, s2, width)
    lhs = bo.adjoint(A @ B).toarray()
    rhs = (bo.adjoint(B) @ bo.adjoint(A)).toarray()
    assert np.max(np.abs(lhs - rhs)) <= 1e-13 * max(1.0, np.max(np.abs(lhs)))
    assert np.array_equal(bo.adjoint(bo.adjoint(A)).toarray(), A.toarray())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000))
def test_norm_is_submultiplicative(s1, s2):
    b = build_module(0, 10)
    A, B = random_band(b, s1), random_band(b, s2)
    nab = bo.operator_norm(A @ B).value
    assert nab <= bo.operator_norm(A).value * bo.operator_norm(B).value + 1e-8


def test_norm_of_scaled_identity():
    b = build_module("1/2", "21/2")
    assert bo.operator_norm(bo.identity(b)).value == pytest.approx(1.0, abs=1e-10)
    assert bo.operator_norm((2 - 3j) * bo.identity(b), method="power").value == pytest.approx(abs(2 - 3j))


def test_interior_window_is_truncation_exact():
    p = DeformationParams(0.5)
    small, big = build_module(1, 12), build_module(1, 14)
    rs, rb = build_rep_std(1, p, small), build_rep_std(1, p, big)
    w = interior_window(small, 3)  # three width-one factors
    Xs = (rs.A @ rs.B @ rs.Bs).toarray()[:, w]
    Xb = (rb.A @ rb.B @ rb.Bs).toarray()[: small.dim, w]
    assert np.array_equal(Xs, Xb)


def test_norm_of_pi_A_stabilises():
    p = DeformationParams(0.5)
    norms = []
    for L in (40, 60):
        A = build_rep_std(0, p, build_module(0, L)).A
        est = bo.operator_norm(A)
        assert est.value == pytest.approx(np.max(np.abs(np.linalg.eigvalsh(A.toarray()))), rel=1e-10)
        norms.append(est.value)
    assert abs(norms[0] - norms[1]) <= 1e-8


@given(st.floats(1e-6, 1e6), st.sampled_from([0.3, 0.5, 0.8]), st.sampled_from([0.2, 1.0, 1.5]))
def test_classification_is_scale_invariant(c, q, ratio):
    b = build_module(0, 30)
    p = DeformationParams(q)
    X = geometric(b, ratio)
    assert bo.classify_kq(bo.decay_profile(c * X), p)[0] == bo.classify_kq(bo.decay_profile(X), p)[0]


def test_documented_decay_rates():
    q = 0.5
    b = build_module(0, 40)
    assert bo.decay_profile(geometric(b, q)).rate == pytest.approx(np.log(q), rel=0.02)
    assert abs(bo.decay_profile(bo.identity(b)).rate) <= 1e-12
    lab, _ = bo.classify_kq(bo.decay_profile(geometric(b, 1 / q)), DeformationParams(q))
    assert lab == "growing"


def test_compose_with_identity_and_shift_pair():
    b = build_module(0, 8)
    X = random_band(b, 9)
    assert np.array_equal((bo.identity(b) @ X).toarray(), X.toarray())
    up = bo.from_terms(b, b, [(0, 0, 1, 0, lambda l, m: 1 + l)], closed=False)
    down = bo.from_terms(b, b, [(0, 0, -1, 0, lambda l, m: 1 + m * m)], closed=False)
    M = (up @ down).matrix.tocoo()
    assert np.all(b.l2[M.row] == b.l2[M.col])
    assert bo.commutator(X, X).max_entry() == 0.0
    assert bo.adjoint(bo.zero(b)).matrix.nnz == 0
