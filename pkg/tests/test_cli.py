import csv
import io
import json

import pytest

from podles import cli
from podles.qcore import HalfInt


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_verify_standard_passes(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "standard", "--N", "-0.5", "--q", "0.5")
    assert code == 0
    rep = json.loads(out)
    assert rep["passed"]
    assert rep["conventions"]["r0_branch"] == -1
    assert any(c["name"].endswith("relations/AB=q2BA") for c in rep["checks"])


def test_exact_order_one_fails_for_generalized_operators(capsys):
    code, _, _ = run(capsys, "verify", "--suite", "order-one-exact", "--flavor", "generalized",
                     "--N", "0", "--r", "2", "--q", "0.5")
    assert code == 1


@pytest.mark.parametrize("argv", [
    ["verify", "--q", "1.5"],
    ["verify", "--r", "1/2"],
    ["verify", "--suite", "nonsense"],
    ["verify", "--N", "1/3"],
    ["verify", "--suite", "real", "--r", "2"],
    ["verify", "--tol", "relations=-1"],
    ["verify", "--L-max", "5"],
    ["pairing", "--N", "0", "--mode", "simple"],
    ["spectrum", "--flavor", "twisted", "--r", "2"],
    ["spectrum", "--flavor", "general", "--d", "1", "2"],
    ["frobnicate"],
])
def test_configuration_errors_exit_two(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert err


def test_config_validation_messages():
    with pytest.raises(cli.ConfigError, match="0 < q < 1"):
        cli.RunConfig("verify", q=[0.0]).validate()
    cfg = cli.RunConfig("verify", N=["-3/2"], alpha="1+2i").validate()
    assert cfg.N == [HalfInt(-3)] and cfg.alpha == 1 + 2j


def test_twisted_spectrum_rows(capsys):
    code, out, _ = run(capsys, "spectrum", "--flavor", "twisted", "--N", "-0.5", "--q", "0.5")
    assert code == 0
    q = 0.5
    data = [r for r in rows(out) if r["level"] != "kernel"]
    assert data
    for r in data:
        l = HalfInt.of(r["level"]).value
        want = (q ** (l + 0.5) - q ** -(l + 0.5)) / (q - 1 / q)
        assert abs(float(r["eigenvalue"])) == pytest.approx(want, rel=1e-12)
        assert int(r["multiplicity"]) == 2 * l + 1
    kern = [r for r in rows(out) if r["level"] == "kernel"]
    assert kern[0]["multiplicity"] == "0"


def test_ellipsoid_spectrum_rows(capsys):
    code, out, _ = run(capsys, "spectrum", "--flavor", "ellipsoid", "--alpha", "i", "--N", "0", "--L-max", "6")
    assert code == 0
    vals = sorted(float(r["eigenvalue"]) for r in rows(out) if r["level"] != "kernel"
                  and float(r["eigenvalue"]) > 0 for _ in range(int(r["multiplicity"])))
    want = sorted((l * l + m * m) ** 0.5 for l in range(1, 7) for m in range(-l, l + 1))
    assert vals == pytest.approx(want, rel=1e-13)


def test_general_spectrum_rows(capsys):
    code, out, _ = run(capsys, "spectrum", "--flavor", "general", "--N", "0", "--r", "2", "--d", "1",
                       "--format", "csv")
    assert code == 0
    data = rows(out)
    for r in data:
        if r["level"] != "kernel" and float(r["eigenvalue"]) != 0:
            assert abs(float(r["eigenvalue"])) == pytest.approx(0.5 ** -HalfInt.of(r["level"]).value)
    assert [r["multiplicity"] for r in data if r["level"] == "kernel"] == ["4"]
    assert any(r["eigenvalue"] == "0" and r["level"] in ("0", "1") for r in data)


def test_simple_pairing_table(capsys):
    code, out, _ = run(capsys, "pairing", "--N", "0.5", "1", "1.5", "2", "--mode", "simple", "--q", "0.5")
    assert code == 0
    data = rows(out)
    assert [float(r["value"]) for r in data] == pytest.approx([-1, -2, -3, -4], abs=1e-8)
    assert list(data[0]) == ["N", "r", "q", "value", "tail", "oracle", "pass"]


def test_higson_pairing_matches_first_example(capsys):
    code, out, _ = run(capsys, "pairing", "--N", "0.5", "--r", "1", "--mode", "higson")
    assert code == 0
    assert float(rows(out)[0]["value"]) == pytest.approx(-3, abs=1e-8)


def test_higson_pairing_mismatch_sets_exit_status(capsys):
    # the tabulated value for N = -3/2 is -8; the computed pairing is 1
    code, out, _ = run(capsys, "pairing", "--N", "-1.5", "--r", "1", "--mode", "higson")
    r = rows(out)[0]
    assert float(r["oracle"]) == -8
    assert float(r["value"]) == pytest.approx(1, abs=1e-8)
    assert r["pass"] == "False" and code == 1


def test_tail_failure_gives_guidance(capsys):
    code, _, err = run(capsys, "pairing", "--N", "1", "--q", "0.8", "--L-max", "10")
    assert code == 1
    assert "enlarge L_max" in err


def test_formats_and_outfile(capsys, tmp_path):
    path = tmp_path / "r.md"
    code, out, _ = run(capsys, "verify", "--N", "1", "--q", "0.5", "--format", "markdown", "--out", str(path))
    assert code == 0 and out == ""
    text = path.read_text()
    assert text.startswith("# verify standard") and "| check | value | tol | pass |" in text
    code, out, _ = run(capsys, "verify", "--N", "1", "--q", "0.5", "--format", "csv")
    assert rows(out)[0].keys() == {"check", "value", "tol", "pass", "params"}


def test_tolerance_override_can_fail_a_run(capsys):
    code, _, _ = run(capsys, "verify", "--N", "1", "--q", "0.5", "--tol", "relations=1e-30")
    assert code == 1


def test_worker_count_does_not_change_the_report(capsys):
    argv = ["verify", "--N", "-1/2", "1", "--q", "0.3", "0.8"]
    _, one, _ = run(capsys, *argv, "--workers", "1")
    _, two, _ = run(capsys, *argv, "--workers", "2")
    assert one == two


def test_run_tasks_preserves_order():
    cfg = cli.RunConfig("verify", N=["1", "-1"], q=[0.5]).validate()
    titles = [r.title for r in cli.verify_reports(cfg)]
    assert titles == ["standard N=1 q=0.5", "standard N=-1 q=0.5"]
