"""Command line: ``podles verify``, ``podles spectrum`` and ``podles pairing``.

Exit codes: 0 when every check passes, 1 when any check fails, 2 on a
configuration error.  Reports contain no timestamps or timings, so a
repeated run with the same arguments writes identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dirac, generic, index, standard
from .basis import build_module, build_spinor
from .qcore import DeformationParams, HalfInt
from .report import VerificationReport, dumps, merge

log = logging.getLogger("podles")

SUITES = ("standard", "real", "order-one-exact", "generalized", "generic")
N_GRID = ("-2", "-3/2", "-1", "-1/2", "0", "1/2", "1", "3/2", "2")
Q_GRID = (0.3, 0.5, 0.8)


class ConfigError(ValueError):
    pass


def _half(text: str) -> HalfInt:
    try:
        return HalfInt.of(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{text!r} is not a half-integer") from exc


def _complex(text: str) -> complex:
    try:
        return complex(str(text).replace("i", "j").replace(" ", ""))
    except ValueError as exc:
        raise ConfigError(f"{text!r} is not a complex number") from exc


@dataclass
class RunConfig:
    command: str
    suites: list = field(default_factory=lambda: ["standard"])
    flavor: str = "twisted"
    N: list = field(default_factory=lambda: list(N_GRID))
    r: list = field(default_factory=lambda: ["1"])
    q: list = field(default_factory=lambda: list(Q_GRID))
    s: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    L_max: int | None = None
    tol: dict = field(default_factory=dict)
    fmt: str = "json"
    out: str | None = None
    workers: int = 1
    mode: str = "simple"
    d: list = field(default_factory=lambda: ["1"])
    alpha: str = "i"

    def validate(self) -> "RunConfig":
        """Check every precondition before anything is computed."""
        self.N = [_half(x) for x in self.N]
        self.r = [_half(x) for x in self.r]
        for r in self.r:
            if not r.is_integer or r.twice < 2:
                raise ConfigError(f"r must be an integer >= 1, got {r}")
        qs = []
        for q in self.q:
            try:
                qs.append(DeformationParams(float(q)).q)
            except ValueError as exc:
                raise ConfigError(f"precondition 0 < q < 1 violated: q = {q}") from exc
        self.q = qs
        self.s = [float(s) for s in self.s]
        if any(s < 0 or not np.isfinite(s) for s in self.s):
            raise ConfigError("precondition s >= 0 violated")
        self.d = [_complex(x) for x in self.d]
        self.alpha = _complex(self.alpha)
        if self.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if self.L_max is not None and self.L_max < 1:
            raise ConfigError("--L-max must be >= 1")
        for name, v in self.tol.items():
            if not v > 0:
                raise ConfigError(f"tolerance {name} must be positive")
        if self.command == "verify":
            for s in self.suites:
                if s not in SUITES:
                    raise ConfigError(f"unknown suite {s!r}; choose from {', '.join(SUITES)}")
            if self.flavor == "twisted" and any(r != HalfInt(2) for r in self.r) \
                    and set(self.suites) & {"real", "order-one-exact"}:
                raise ConfigError("the twisted Dirac operator needs r = 1")
        if self.command == "pairing":
            if self.mode == "simple" and any(n.twice <= 0 for n in self.N):
                raise ConfigError("simple pairing needs N > 0")
        if self.command == "spectrum" and self.flavor in ("twisted", "linear", "ellipsoid") \
                and any(r != HalfInt(2) for r in self.r):
            raise ConfigError(f"the {self.flavor} spectrum needs r = 1")
        return self


def _cut(N: HalfInt, L: int | None, default: int, extra: HalfInt = HalfInt(0)) -> HalfInt:
    """Cutoff with the parity of N, at least ten levels above ``extra``."""
    base = HalfInt.of(default if L is None else L)
    cut = base + HalfInt(abs(N).twice % 2)
    need = max(abs(N), extra) + 10
    if cut < need:
        raise ConfigError(f"L_max={base} leaves fewer than ten levels above {max(abs(N), extra)}")
    return cut


def _small_cut(N: HalfInt, L: int, r: HalfInt = HalfInt(2)) -> HalfInt:
    """Cutoff for closed-form and dense spectra; only needs the matched level."""
    cut = HalfInt.of(L) + HalfInt(abs(N).twice % 2)
    if cut < max(abs(N), abs(N + r)):
        raise ConfigError(f"L_max={L} lies below the matched level {max(abs(N), abs(N + r))}")
    return cut


# -- verification tasks -----------------------------------------------------------------

def _task_standard(N, q, L, tol):
    p = DeformationParams(q)
    cut = _cut(N, L, 40)
    basis = build_module(N, cut)
    rep = standard.build_rep_std(N, p, basis)
    out = VerificationReport(f"standard N={N} q={q:g}",
                             conventions={"r0_branch": standard.select_branch(N, q),
                                          "e": "lowers m", "L_max": str(cut)})
    out.extend(standard.check_relations(N, p, tol=tol.get("relations", 1e-12), basis=basis, rep=rep), "relations")
    out.extend(standard.check_equivariance(N, p, tol=tol.get("equivariance", 1e-11), basis=basis, rep=rep),
               "equivariance")
    out.extend(standard.check_uq_relations(basis, p), "uq")
    out.extend(standard.check_approximation(N, p, L_max=cut, basis=basis), "approximation")
    out.extend(standard.verify_r_recurrences(N, p), "recurrences")
    out.extend(standard.check_star_action(p), "star-action")
    return out


def _spectrum_check(N, p, out):
    """Closed form vs the block spectrum vs a dense eigensolve at a small cutoff."""
    small = build_spinor(N, 1, _small_cut(N, 8))
    D = dirac.build_dirac_twisted(N, p, small)
    spec = dirac.spectrum(D, small)
    dense = np.sort(np.linalg.eigvalsh(D.toarray()))
    out.add("spectrum block-vs-dense", float(np.max(np.abs(dense - np.sort(spec.eigenvalues())))), 1e-10)
    dev = 0.0
    mult_ok = True
    for l, v, n in spec.nonzero():
        dev = max(dev, abs(abs(v) - dirac.twisted_eigenvalue(l.value, N, p)))
        mult_ok &= n == l.twice + 1
    out.add("spectrum closed-form", dev, 1e-10, multiplicities_2l_plus_1=bool(mult_ok))
    out.add("multiplicity 2l+1", 0.0 if mult_ok else 1.0, None, passed=mult_ok)
    law = dirac.kernel_dimension_law(N)
    out.add("kernel dimension", float(spec.kernel_dim), None, passed=spec.kernel_dim == law, expected=law)


def _task_real(N, q, L, tol):
    p = DeformationParams(q)
    cut = _cut(N, L, 40, abs(N + 1))
    b = dirac.make_bundle(N, 1, p, cut, "twisted")
    out = VerificationReport(f"real N={N} q={q:g}", conventions={"orientation": "up_plus", "J_phase": "i2m"})
    out.extend(dirac.check_structure(b), "structure")
    eps = dirac.reality_sign(b.J)
    want = 1 if N.is_integer else -1
    out.add("J^2 sign", float(eps), None, passed=eps == want, expected=want)
    out.add("JD sign", float(dirac.jd_sign(b) or 0), None, passed=dirac.jd_sign(b) is not None,
            informational=True)
    out.extend(dirac.check_commutant(b, tol.get("commutant", 1e-11)), "commutant")
    out.extend(dirac.check_order_one(b, "exact", tol.get("order_one", 1e-10)), "order-one")
    _spectrum_check(N, p, out)
    if q <= 0.95:
        out.extend(dirac.check_compact_perturbation(N, p, cut), "compact-perturbation")
    return out


def _task_order_one_exact(N, r, q, L, flavor, tol):
    p = DeformationParams(q)
    cut = _cut(N, L, 40, abs(N + r))
    fl = "twisted" if flavor == "twisted" else "general"
    b = dirac.make_bundle(N, r, p, cut, fl)
    out = VerificationReport(f"order-one-exact {fl} N={N} r={r} q={q:g}")
    out.extend(dirac.check_order_one(b, "exact", tol.get("order_one", 1e-10)), fl)
    return out


def _task_generalized(N, r, q, L, tol):
    p = DeformationParams(q)
    top = _cut(N, L, 40, abs(N + r))
    Ls = [top - 20, top - 10, top]
    if Ls[0] < max(abs(N), abs(N + r)) + 5:
        raise ConfigError(f"L_max={top} too small for the cutoff ladder {Ls}")
    out = VerificationReport(f"generalized N={N} r={r} q={q:g}", conventions={"d": "(1,1)", "L": [str(x) for x in Ls]})
    make = lambda Lc: dirac.make_bundle(N, r, p, Lc, "general", doubled=False)
    out.extend(dirac.check_bounded_commutators(make, Ls, tol.get("norm", 1e-6)), "commutators")
    b = dirac.make_bundle(N, r, p, top, "general")
    out.extend(dirac.check_order_one(b, "up_to_Kq"), "order-one")
    exact = dirac.check_order_one(b, "exact", tol.get("order_one", 1e-10))
    out.add("exact order-one fails (control)", exact.worst(), None, passed=not exact.passed)
    return out


def _task_generic(N, s, q, L, alpha, tol):
    p = DeformationParams(q, s)
    top = _cut(N, L, 40, abs(N + 1))
    out = VerificationReport(f"generic N={N} s={s:g} q={q:g}")
    rel = generic.check_relations_generic(generic.build_rep_generic(N, s, p, L_max=top))
    out.extend(rel, "relations")
    out.conventions["ab*_exponent"] = rel.conventions["ab*_exponent"]
    small = build_spinor(N, 1, _small_cut(N, 8))
    lin = generic.build_dirac_linear(N, p, small)
    spec = dirac.spectrum(lin, small)
    dev = max((abs(abs(v) - (l.value - float(N))) for l, v, n in spec.nonzero()), default=0.0)
    mult = all(n == l.twice + 1 for l, v, n in spec.nonzero())
    out.add("linear spectrum +-(l-N)", dev, 1e-12, multiplicities_2l_plus_1=mult)
    aff = generic.build_dirac_affine(N, alpha, p, small)
    sa = dirac.spectrum(aff, small)
    up = small.up
    lm = float(dirac.matched_level(N, 1))
    want = sorted(generic.ellipsoid_eigenvalue(l, m, alpha)
                  for l, m in zip(up._l2 / 2, up._m2 / 2) if l >= lm - 1e-9)
    got = sorted(abs(v) for l, v, n in sa.rows if v > 0 for _ in range(n))
    dense = np.sort(np.linalg.eigvalsh(aff.toarray()))
    dev_e = max(np.max(np.abs(np.array(got) - np.array(want))) if len(got) == len(want) else np.inf,
                float(np.max(np.abs(dense - np.sort(sa.eigenvalues())))))
    out.add(f"affine spectrum |l+alpha m| (alpha={alpha})", dev_e, 1e-10)
    mk = lambda fl, a: (lambda Lc: generic.make_generic_bundle(N, s, p, Lc, fl, a, doubled=False))
    Ls = [top - 20, top - 10, top]
    out.extend(generic.check_commutators_generic(mk("linear", 0.0), Ls, tol.get("norm", 1e-6)), "linear")
    out.extend(generic.check_commutators_generic(mk("affine", alpha), Ls, tol.get("norm", 1e-6),
                                                 shift_parts=False), "affine")
    b = generic.make_generic_bundle(N, s, p, top, "linear")
    out.extend(dirac.check_order_one(b, "up_to_Kq"), "order-one")
    out.extend(generic.check_dirac_equivariance(b.D, b.basis, p), "linear-equivariance")
    ab = generic.make_generic_bundle(N, s, p, 20 + (abs(N) + 1).twice // 2, "affine", alpha)
    eq = generic.check_dirac_equivariance(ab.D, ab.basis, p)
    out.add("affine breaks equivariance", eq.worst(), None, passed=not eq.passed, alpha=str(alpha))
    return out


def _run(task):
    kind, args = task
    fn = {"standard": _task_standard, "real": _task_real, "order-one-exact": _task_order_one_exact,
          "generalized": _task_generalized, "generic": _task_generic}[kind]
    return fn(*args)


def _tasks(cfg: RunConfig):
    for suite in cfg.suites:
        for N in cfg.N:
            for q in cfg.q:
                if suite == "standard":
                    yield suite, (N, q, cfg.L_max, cfg.tol)
                elif suite == "real":
                    yield suite, (N, q, cfg.L_max, cfg.tol)
                elif suite == "order-one-exact":
                    for r in cfg.r:
                        yield suite, (N, r, q, cfg.L_max, cfg.flavor, cfg.tol)
                elif suite == "generalized":
                    for r in cfg.r:
                        yield suite, (N, r, q, cfg.L_max, cfg.tol)
                else:
                    for s in cfg.s:
                        yield suite, (N, s, q, cfg.L_max, cfg.alpha, cfg.tol)


def run_tasks(tasks, workers: int = 1) -> list:
    """Map tasks to reports, in task order whatever the worker count."""
    tasks = list(tasks)
    if workers == 1 or len(tasks) < 2:
        return [_run(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run, tasks))


# -- rendering ---------------------------------------------------------------------------

def _csv_rows(report: VerificationReport):
    for c in report.checks:
        yield [c.name, f"{c.value:.6e}", "" if c.tol is None else f"{c.tol:g}", c.passed,
               dumps(c.params).replace("\n", "").replace("  ", "")]


def render_report(report: VerificationReport, fmt: str) -> str:
    if fmt == "json":
        return report.to_json() + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "value", "tol", "pass", "params"])
        w.writerows(_csv_rows(report))
        return buf.getvalue()
    lines = [f"# {report.title}", "", f"passed: {report.passed}", "",
             "| check | value | tol | pass |", "|---|---|---|---|"]
    for c in report.checks:
        lines.append(f"| {c.name} | {c.value:.3e} | {'' if c.tol is None else f'{c.tol:g}'} | "
                     f"{'yes' if c.passed else 'NO'} |")
    return "\n".join(lines) + "\n"


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- commands ---------------------------------------------------------------------------

def verify_reports(cfg: RunConfig) -> list:
    """One report per (suite, parameter) task of a validated config, in task order."""
    return run_tasks(_tasks(cfg), cfg.workers)


def cmd_verify(cfg: RunConfig) -> int:
    reports = verify_reports(cfg)
    report = merge("verify " + ",".join(cfg.suites), reports)
    _emit(render_report(report, cfg.fmt), cfg.out)
    for c in report.failures():
        log.warning("FAIL %s value=%.3e tol=%s", c.name, c.value, c.tol)
    return 0 if report.passed else 1


def spectrum_rows(cfg: RunConfig):
    rows = []
    for N in cfg.N:
        for q in cfg.q:
            p = DeformationParams(q)
            for r in cfg.r:
                L = _small_cut(N, 10 if cfg.L_max is None else cfg.L_max, r)
                h = build_spinor(N, r, L)
                if cfg.flavor == "twisted":
                    D = dirac.build_dirac_twisted(N, p, h)
                elif cfg.flavor == "general":
                    D, sa = dirac.build_dirac_general(N, r, cfg.d[0], cfg.d[-1], p, h)
                    if not sa:
                        raise ConfigError("spectrum needs a self-adjoint D: use d_N+r = conj(d_N)")
                elif cfg.flavor == "linear":
                    D = generic.build_dirac_linear(N, p, h)
                elif cfg.flavor == "ellipsoid":
                    D = generic.build_dirac_affine(N, cfg.alpha, p, h)
                else:
                    raise ConfigError(f"unknown flavor {cfg.flavor!r}")
                spec = dirac.spectrum(D, h)
                for l, v, n in spec.rows:
                    rows.append([cfg.flavor, str(N), str(r), f"{q:g}", str(l), f"{v:.15g}", n])
                rows.append([cfg.flavor, str(N), str(r), f"{q:g}", "kernel", "0", spec.kernel_dim])
    return rows


SPECTRUM_COLUMNS = ["flavor", "N", "r", "q", "level", "eigenvalue", "multiplicity"]


def cmd_spectrum(cfg: RunConfig) -> int:
    rows = spectrum_rows(cfg)
    if cfg.fmt == "json":
        text = dumps([dict(zip(SPECTRUM_COLUMNS, row)) for row in rows]) + "\n"
    elif cfg.fmt == "markdown":
        text = "| " + " | ".join(SPECTRUM_COLUMNS) + " |\n|" + "---|" * len(SPECTRUM_COLUMNS) + "\n"
        text += "".join("| " + " | ".join(map(str, row)) + " |\n" for row in rows)
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SPECTRUM_COLUMNS)
        w.writerows(rows)
        text = buf.getvalue()
    _emit(text, cfg.out)
    return 0


def _pair_one(task):
    mode, N, r, q, L = task
    p = DeformationParams(q)
    if mode == "simple":
        return index.pairing_simple(N, p, L)
    return index.pairing_higson(N, r, p, L)


def cmd_pairing(cfg: RunConfig) -> int:
    tasks = [(cfg.mode, N, r, q, cfg.L_max) for N in cfg.N
             for r in (cfg.r if cfg.mode == "higson" else [None]) for q in cfg.q]
    try:
        if cfg.workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                reports = list(pool.map(_pair_one, tasks))
        else:
            reports = [_pair_one(t) for t in tasks]
    except index.TailTooLarge as exc:
        sys.stderr.write(f"pairing: {exc}\n")
        return 1
    if cfg.fmt == "markdown":
        text = index.pairing_table_markdown(reports)
    elif cfg.fmt == "json":
        text = dumps([dict(rp.row(), conventions=rp.conventions, L_max=rp.L_max) for rp in reports]) + "\n"
    else:
        text = index.pairing_table_csv(reports)
    _emit(text, cfg.out)
    return 0 if all(rp.passed for rp in reports) else 1


# -- argument parsing --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="podles", description="Spectral geometry checks on Podles spheres.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, fmt_default):
        p.add_argument("--N", nargs="+", default=None, help="half-integers, e.g. -0.5 or 3/2")
        p.add_argument("--r", nargs="+", default=None)
        p.add_argument("--q", nargs="+", type=float, default=None)
        p.add_argument("--L-max", dest="L_max", type=int, default=None)
        p.add_argument("--format", dest="fmt", choices=("json", "csv", "markdown"), default=fmt_default)
        p.add_argument("--out", default=None)
        p.add_argument("--workers", type=int, default=1)

    v = sub.add_parser("verify", help="run verification suites")
    common(v, "json")
    v.add_argument("--suite", nargs="+", default=["standard"], dest="suites")
    v.add_argument("--flavor", default="twisted", choices=("twisted", "generalized", "general"))
    v.add_argument("--s", nargs="+", type=float, default=None)
    v.add_argument("--alpha", default="i")
    v.add_argument("--tol", nargs="+", default=[], metavar="NAME=VALUE",
                   help="overrides: relations, equivariance, commutant, order_one, norm")

    s = sub.add_parser("spectrum", help="eigenvalue and multiplicity tables")
    common(s, "csv")
    s.add_argument("--flavor", default="twisted", choices=("twisted", "general", "linear", "ellipsoid"))
    s.add_argument("--d", nargs="+", default=["1"])
    s.add_argument("--alpha", default="i")

    p = sub.add_parser("pairing", help="index pairings with the projector")
    common(p, "csv")
    p.add_argument("--mode", choices=("simple", "higson"), default="simple")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(ns.command)
    defaults = {"spectrum": {"N": ["1/2"], "q": [0.5]}, "pairing": {"N": ["1/2", "1", "3/2", "2"], "q": [0.5]}}
    for key in ("N", "r", "q"):
        val = getattr(ns, key)
        if val is not None:
            setattr(cfg, key, list(val))
        elif key in defaults.get(ns.command, {}):
            setattr(cfg, key, list(defaults[ns.command][key]))
    cfg.L_max, cfg.fmt, cfg.out, cfg.workers = ns.L_max, ns.fmt, ns.out, ns.workers
    if ns.command == "verify":
        cfg.suites, cfg.flavor, cfg.alpha = ns.suites, ns.flavor, ns.alpha
        if ns.s is not None:
            cfg.s = ns.s
        for item in ns.tol:
            name, _, val = item.partition("=")
            try:
                cfg.tol[name] = float(val)
            except ValueError as exc:
                raise ConfigError(f"bad tolerance override {item!r}") from exc
    elif ns.command == "spectrum":
        cfg.flavor, cfg.d, cfg.alpha = ns.flavor, ns.d, ns.alpha
    else:
        cfg.mode = ns.mode
    return cfg.validate()


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = config_from_args(ns)
        return {"verify": cmd_verify, "spectrum": cmd_spectrum, "pairing": cmd_pairing}[cfg.command](cfg)
    except ConfigError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
