"""Acceptance criteria, one test each.

Every test prints a single PASS/FAIL line (collected again in the terminal
summary) and then asserts.  Tolerances are the contractual ones; nothing is
loosened to make a line pass.
"""

import time

import numpy as np
from podles import cli, dirac, index, standard
from podles.basis import build_spinor
from podles.qcore import DeformationParams, HalfInt

N_GRID = [HalfInt.of(n) for n in cli.N_GRID]
Q_GRID = list(cli.Q_GRID)


def cutoff(N, base=40):
    return HalfInt.of(base) + HalfInt(abs(N).twice % 2)


def qnum(x, q):
    return (q ** x - q ** -x) / (q - 1 / q)


def test_criterion_01_algebra_exactness(criterion):
    t0 = time.perf_counter()
    worst, failed = 0.0, []
    for N in N_GRID:
        for q in Q_GRID:
            rep = standard.check_relations(N, DeformationParams(q), L_max=cutoff(N), tol=1e-12)
            worst = max(worst, rep.worst())
            if not rep.passed:
                failed.append((str(N), q))
    elapsed = time.perf_counter() - t0
    ok = not failed and elapsed <= 60
    criterion(1, ok, f"max residual {worst:.2e} (tol 1e-12), {elapsed:.1f} s (limit 60 s), failures {failed}")
    assert ok


def test_criterion_02_equivariance(criterion):
    worst, failed = 0.0, []
    for N in N_GRID:
        for q in Q_GRID:
            rep = standard.check_equivariance(N, DeformationParams(q), L_max=cutoff(N), tol=1e-11)
            assert len(rep.checks) >= 9
            worst = max(worst, rep.worst())
            if not rep.passed:
                failed.append((str(N), q))
    criterion(2, not failed, f"max residual {worst:.2e} (tol 1e-11), failures {failed}")
    assert not failed


def test_criterion_03_approximation_order(criterion):
    failed = []
    for N in N_GRID:
        for q in Q_GRID:
            rep = standard.check_approximation(N, DeformationParams(q), L_max=cutoff(N), margin=0.05)
            if not rep.passed:
                failed.append((str(N), q, [c.name for c in rep.failures()]))
    criterion(3, not failed, f"rate <= 2 ln q + 5% on {len(N_GRID) * len(Q_GRID)} points, failures {failed}")
    assert not failed


def test_criterion_04_spectra_and_kernels(criterion):
    dev, bad_kernel = 0.0, []
    for N in N_GRID:
        for q in Q_GRID:
            h = build_spinor(N, 1, cutoff(N, 8))
            D = dirac.build_dirac_twisted(N, DeformationParams(q), h)
            eig = np.sort(np.linalg.eigvalsh(D.toarray()))
            n = N.value
            kernel = 2 * n + 1 if n >= 0 else 2 * abs(n) - 1
            want = [0.0] * int(kernel)
            l = max(abs(n), abs(n + 1))
            while l <= h.L_max.value + 1e-9:
                lam = np.sqrt(qnum(l - n, q) * qnum(l + n + 1, q))
                want += [lam, -lam] * int(2 * l + 1)
                l += 1
            want = np.sort(want)
            if want.size != eig.size:
                dev = np.inf
                continue
            dev = max(dev, float(np.max(np.abs(eig - want))))
            zeros = int(np.sum(np.abs(eig) < 1e-9))
            if zeros != kernel:
                bad_kernel.append((str(N), q, zeros, kernel))
    ok = dev <= 1e-10 and not bad_kernel
    criterion(4, ok, f"max |dense - closed form| {dev:.2e} (tol 1e-10), kernel mismatches {bad_kernel}")
    assert ok


def test_criterion_05_real_structure(criterion):
    problems = []
    worst_comm = worst_o1 = 0.0
    for N in N_GRID:
        for q in Q_GRID:
            b = dirac.make_bundle(N, 1, DeformationParams(q), cutoff(N), "twisted")
            want = 1 if N.is_integer else -1
            if dirac.reality_sign(b.J) != want:
                problems.append((str(N), q, "J^2"))
            st = dirac.check_structure(b)
            if not all(c.passed for c in st.checks if c.name == "J gamma=-gamma J"):
                problems.append((str(N), q, "J gamma"))
            cm = dirac.check_commutant(b, 1e-11)
            o1 = dirac.check_order_one(b, "exact", 1e-10)
            worst_comm, worst_o1 = max(worst_comm, cm.worst()), max(worst_o1, o1.worst())
            if not cm.passed:
                problems.append((str(N), q, "commutant"))
            if not o1.passed:
                problems.append((str(N), q, "order-one"))
    criterion(5, not problems, f"commutant {worst_comm:.2e} (1e-11), order-one {worst_o1:.2e} (1e-10), "
                               f"J^2 and J gamma signs, problems {problems}")
    assert not problems


def test_criterion_06_generalized_triples(criterion):
    cfg = cli.RunConfig("verify", suites=["generalized"], r=["1", "2", "3"]).validate()
    reports = cli.verify_reports(cfg)
    fails = [(r.title, c.name) for r in reports for c in r.failures()]
    worst = max(c.value for r in reports for c in r.checks if c.name.startswith("commutators/"))
    controls = all(any(c.name == "exact order-one fails (control)" and c.passed for c in r.checks)
                   for r in reports)
    ok = not fails and controls
    criterion(6, ok, f"{len(reports)} (N, r, q) points, worst relative norm change {worst:.2e} (1e-6), "
                     f"order-one in K_q, exact control fails as required; failures {fails}")
    assert ok


def test_criterion_07_index_pairings(criterion):
    t0 = time.perf_counter()
    lines, ok = [], True
    for n in ("1/2", "1", "3/2", "2"):
        vals = []
        for q in Q_GRID:
            rp = index.pairing_simple(n, DeformationParams(q))
            vals.append(rp)
            ok &= rp.passed
        spread = max(v.value for v in vals) - min(v.value for v in vals)
        allowed = 2 * max(v.tolerance for v in vals)
        ok &= spread <= allowed
        lines.append(f"simple N={n}: {[round(v.value, 9) for v in vals]} vs {vals[0].expected:g}, "
                     f"q-spread {spread:.1e}")
    for n, r in (("1/2", 1), ("1", 1), ("-1/2", 1), ("-3/2", 1), ("0", 2), ("-1", 3)):
        rp = index.pairing_higson(n, r, DeformationParams(0.5))
        ok &= rp.passed
        lines.append(f"higson (N,r)=({n},{r}): {rp.value:.9f} vs oracle {rp.expected:g} "
                     f"{'ok' if rp.passed else 'MISMATCH'}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 120
    criterion(7, ok, f"{elapsed:.1f} s (limit 120 s); " + "; ".join(lines))
    assert ok


def test_criterion_08_q_to_zero(criterion):
    worst, failed = [], []
    for N in N_GRID:
        rep = index.q_zero_limit_check(N, (0.3, 0.1, 0.03))
        worst.append(max(c.value / c.tol for c in rep.checks))
        if not rep.passed:
            failed.append(str(N))
    criterion(8, not failed, f"max deviation / (10 q) = {max(worst):.2f}, failures {failed}")
    assert not failed


def test_criterion_09_generic_spheres(criterion):
    cfg = cli.RunConfig("verify", suites=["generic"]).validate()
    reports = cli.verify_reports(cfg)
    fails = [(r.title, c.name) for r in reports for c in r.failures()]
    neg = all(any(c.name == "affine breaks equivariance" and c.passed for c in r.checks) for r in reports)
    ok = not fails and neg
    criterion(9, ok, f"{len(reports)} (N, s, q) points: relations in K_q, +-(l-N) and sqrt(l^2+m^2) spectra, "
                     f"alpha0 = i breaks equivariance; failures {fails}")
    assert ok


def test_criterion_10_determinism(criterion, tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.json"
        code = cli.main(["verify", "--suite", "standard", "real", "--out", str(path)])
        assert code == 0
        outs.append(path.read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    criterion(10, ok, f"two full standard+real runs, {len(outs[0])} bytes, identical={outs[0] == outs[1]}")
    assert ok
