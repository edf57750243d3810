"""Scenario parsing, pipeline reports, output formats, and exit codes."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from nexpect import ScenarioError
from nexpect.cli import (
    ESTIMATOR_ORDER,
    EXIT_BAD_SCENARIO,
    EXIT_CHECK_FAILED,
    EXIT_GRID_REJECTED,
    EXIT_OK,
    KNOWN_CHECKS,
    emit,
    emit_csv,
    emit_structured,
    emit_text,
    load_scenario,
    main,
    parse_payoff_expression,
    run_scenario,
)

BASE = """\
s0 = 100
mu = 0.0
sigma = 0.2
horizon = 1.0
k = 0.1
payoff = call
strike = 100
n_paths = 20000
steps = 4
seed = 31
nodes = 101
time_steps = 200
theta_grid = 11
quantile_levels = 129
"""


def write_scn(tmp_path, body, name="case.scn"):
    path = tmp_path / name
    path.write_text(body, encoding="utf-8")
    return str(path)


# ---------------------------------------------------------------------------
# payoff expressions
# ---------------------------------------------------------------------------

def test_expression_arithmetic_and_broadcast():
    fn = parse_payoff_expression("max(s - 100, 0)")
    s = np.array([80.0, 100.0, 130.0])
    assert np.array_equal(fn(s), [0.0, 0.0, 30.0])
    const = parse_payoff_expression("2.5")
    assert np.array_equal(const(s), [2.5, 2.5, 2.5])
    combo = parse_payoff_expression("min(max(s - 90, 0), 20) / 2 + 1")
    assert np.array_equal(combo(s), [1.0, 6.0, 11.0])
    neg = parse_payoff_expression("-(s - 100)")
    assert np.array_equal(neg(s), [20.0, 0.0, -30.0])


def test_expression_rejects_disallowed_syntax():
    for bad in (
        "s ** 2",          # power not allowed
        "abs(s)",          # only max/min calls
        "max(s)",          # needs >= 2 arguments
        "t + 1",           # unknown symbol
        "s > 100",         # comparisons
        "'x'",             # non-numeric constant
        "True",            # boolean constant
        "max(s, key=1)",   # keywords
        "s +",             # syntax error
        "__import__('os')",
    ):
        with pytest.raises(ScenarioError):
            parse_payoff_expression(bad)


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def test_load_scenario_roundtrip(tmp_path):
    body = BASE + "fd_substep = true\nchecks = chain, sandwich\n# trailing comment\n"
    scn = load_scenario(write_scn(tmp_path, body))
    assert scn.s0 == 100.0 and scn.k == 0.1
    assert scn.payoff_kind == "call" and scn.strike == 100.0
    assert scn.n_paths == 20000 and scn.steps == 4 and scn.seed == 31
    assert scn.nodes == 101 and scn.time_steps == 200
    assert scn.theta_grid == 11 and scn.quantile_levels == 129
    assert scn.fd_substep is True
    assert scn.checks == ("chain", "sandwich")


def test_load_scenario_defaults(tmp_path):
    minimal = "\n".join(BASE.splitlines()[:10])  # required keys only
    scn = load_scenario(write_scn(tmp_path, minimal))
    assert scn.nodes == 801 and scn.time_steps == 2000
    assert scn.theta_grid == 21 and scn.quantile_levels == 513
    assert scn.fd_substep is True and scn.checks == ()


def test_load_scenario_overrides(tmp_path):
    scn = load_scenario(write_scn(tmp_path, BASE),
                        overrides={"seed": 77, "n_paths": 5000, "steps": None})
    assert scn.seed == 77 and scn.n_paths == 5000
    assert scn.steps == 4  # None overrides are ignored


def test_load_scenario_line_numbered_errors(tmp_path):
    with pytest.raises(ScenarioError, match="line 2") as err:
        load_scenario(write_scn(tmp_path, "s0 = 100\nwhat = 3\n"))
    assert err.value.line == 2

    with pytest.raises(ScenarioError, match="duplicate"):
        load_scenario(write_scn(tmp_path, BASE + "s0 = 50\n"))
    with pytest.raises(ScenarioError, match="key = value"):
        load_scenario(write_scn(tmp_path, "s0\n"))
    with pytest.raises(ScenarioError, match="must be a number"):
        load_scenario(write_scn(tmp_path, BASE.replace("sigma = 0.2", "sigma = big")))
    with pytest.raises(ScenarioError, match="must be an integer"):
        load_scenario(write_scn(tmp_path, BASE.replace("seed = 31", "seed = 3.5")))
    with pytest.raises(ScenarioError, match="true or false"):
        load_scenario(write_scn(tmp_path, BASE + "fd_substep = maybe\n"))
    with pytest.raises(ScenarioError, match="unknown check"):
        load_scenario(write_scn(tmp_path, BASE + "checks = chain, wat\n"))
    with pytest.raises(ScenarioError, match="missing required"):
        load_scenario(write_scn(tmp_path, "s0 = 100\n"))
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario(str(tmp_path / "absent.scn"))


def test_load_scenario_range_validation(tmp_path):
    cases = [
        ("s0 = 100", "s0 = -5", "s0 must be positive"),
        ("horizon = 1.0", "horizon = 0", "horizon must be positive"),
        ("k = 0.1", "k = -0.1", "k must be >= 0"),
        ("n_paths = 20000", "n_paths = 0", "n_paths must be >= 1"),
        ("strike = 100", "strike = -1", "strike must be positive"),
    ]
    for old, new, msg in cases:
        with pytest.raises(ScenarioError, match=msg):
            load_scenario(write_scn(tmp_path, BASE.replace(old, new)))


def test_load_scenario_payoff_validation(tmp_path):
    with pytest.raises(ScenarioError, match="requires a strike"):
        load_scenario(write_scn(tmp_path, BASE.replace("strike = 100\n", "")))
    with pytest.raises(ScenarioError, match="requires an expr"):
        load_scenario(write_scn(
            tmp_path, BASE.replace("payoff = call", "payoff = custom").replace("strike = 100\n", "")))
    with pytest.raises(ScenarioError, match="payoff expression"):
        load_scenario(write_scn(
            tmp_path,
            BASE.replace("payoff = call", "payoff = custom").replace("strike = 100", "expr = s **")))
    with pytest.raises(ScenarioError, match="payoff must be"):
        load_scenario(write_scn(tmp_path, BASE.replace("payoff = call", "payoff = warrant")))


# ---------------------------------------------------------------------------
# pipeline reports
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_report(tmp_path_factory):
    path = write_scn(tmp_path_factory.mktemp("scn"),
                     BASE + "checks = chain, sandwich, normalization, martingale, duality\n")
    return run_scenario(load_scenario(path), scenario_path=path)


def test_report_shape(small_report):
    assert [e.name for e in small_report.entries] == list(ESTIMATOR_ORDER)
    d = small_report.discrepancy
    assert d.shape == (9, 9)
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0.0)
    assert {c.name for c in small_report.checks} == {
        "chain", "sandwich", "normalization", "martingale", "duality"}
    assert small_report.failed_checks == []
    meta = small_report.metadata
    assert meta["seed"] == 31 and meta["n_paths"] == 20000
    assert meta["time_steps_used"] >= meta["time_steps_requested"] == 200
    assert meta["family_size"] == 19  # 11 constants + 8 bang-bang


def test_report_entry_lookup(small_report):
    assert small_report.entry("plain").name == "plain"
    with pytest.raises(KeyError):
        small_report.entry("delta")


def test_degeneracy_honest_failure_at_positive_k(tmp_path, capsys):
    path = write_scn(tmp_path, BASE + "checks = degeneracy\n")
    code = main(["--scenario", path])
    assert code == EXIT_CHECK_FAILED
    err = capsys.readouterr().err
    assert "check failed: degeneracy" in err
    assert "degeneracy expected only at k = 0" in err


def test_degeneracy_passes_at_zero_k(tmp_path, capsys):
    body = BASE.replace("k = 0.1", "k = 0.0") + "checks = degeneracy, chain\n"
    path = write_scn(tmp_path, body)
    code = main(["--scenario", path])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "degeneracy      pass" in out


def test_zero_k_exact_collapse(tmp_path):
    body = BASE.replace("k = 0.1", "k = 0.0")
    report = run_scenario(load_scenario(write_scn(tmp_path, body)))
    plain = report.entry("plain").value
    for name in ("choquet_upper", "choquet_lower", "minimax_upper", "minimax_lower"):
        assert report.entry(name).value == plain  # bitwise, shared randomness


def test_digital_scenario_flags_solver_note(tmp_path):
    body = BASE.replace("payoff = call", "payoff = digital")
    report = run_scenario(load_scenario(write_scn(tmp_path, body)))
    assert "discontinuous" in report.entry("bsde_upper").note
    assert report.entry("extremal_upper").note == "reweighting"
    assert report.entry("extremal_upper").std_error > 0.0
    assert 0.0 < report.entry("plain").value < 1.0


def test_custom_non_monotone_scenario(tmp_path):
    body = (BASE.replace("payoff = call", "payoff = custom")
                .replace("strike = 100", "expr = max(s - 100, 100 - s)")
            + "checks = chain, sandwich, zsign, attainment\n")
    report = run_scenario(load_scenario(write_scn(tmp_path, body)))
    assert math.isnan(report.entry("extremal_upper").value)
    assert "not applicable" in report.entry("extremal_upper").note
    by_name = {c.name: c for c in report.checks}
    assert by_name["chain"].status == "not_applicable"
    assert by_name["zsign"].status == "not_applicable"
    assert by_name["attainment"].status == "not_applicable"
    assert by_name["sandwich"].status == "pass"
    # upper Choquet dominates upper minimax strictly for this claim
    gap = report.entry("choquet_upper").value - report.entry("minimax_upper").value
    assert gap > 0.0


def test_declared_monotonicity_is_spot_checked(tmp_path):
    body = (BASE.replace("payoff = call", "payoff = custom")
                .replace("strike = 100", "expr = 100 - s")
            + "monotonicity = increasing\n")
    with pytest.raises(ScenarioError, match="increasing"):
        run_scenario(load_scenario(write_scn(tmp_path, body)))


# ---------------------------------------------------------------------------
# output formats
# ---------------------------------------------------------------------------

def test_emit_text_sections(small_report):
    text = emit_text(small_report)
    assert "estimator" in text and "pairwise absolute differences" in text
    assert "checks" in text
    assert "runtime:" in text


def test_emit_text_omits_empty_checks(tmp_path):
    report = run_scenario(load_scenario(write_scn(tmp_path, BASE)))
    text = emit_text(report)
    assert "checks" not in text.splitlines()
    payload = json.loads(emit_structured(report))
    assert payload["checks"] == []


def test_emit_csv_schema(small_report):
    csv = emit_csv(small_report)
    lines = csv.strip().split("\n")
    assert lines[0] == "estimator,value,std_error"
    assert len(lines) == 10
    names = [line.split(",")[0] for line in lines[1:]]
    assert names == list(ESTIMATOR_ORDER)
    value = float(lines[1].split(",")[1])
    assert value == pytest.approx(small_report.entry("choquet_upper").value, rel=1e-11)


def test_emit_structured_parses_and_excludes_runtime(small_report):
    payload = json.loads(emit_structured(small_report))
    assert payload["scenario"]["s0"] == 100.0
    assert len(payload["estimators"]) == 9
    assert len(payload["discrepancy"]) == 9
    assert "runtime_seconds" not in payload["metadata"]
    assert {c["name"] for c in payload["checks"]} == {
        "chain", "sandwich", "normalization", "martingale", "duality"}


def test_emit_structured_nan_becomes_null(tmp_path):
    body = (BASE.replace("payoff = call", "payoff = custom")
                .replace("strike = 100", "expr = max(s - 100, 100 - s)"))
    report = run_scenario(load_scenario(write_scn(tmp_path, body)))
    payload = json.loads(emit_structured(report))
    ext = [e for e in payload["estimators"] if e["name"] == "extremal_upper"][0]
    assert ext["value"] is None


def test_emit_unknown_format(small_report):
    with pytest.raises(ValueError, match="unknown format"):
        emit(small_report, "yaml")


def test_emit_deterministic_across_reruns_and_threads(tmp_path):
    path = write_scn(tmp_path, BASE)
    scn = load_scenario(path)
    a = emit_csv(run_scenario(scn, scenario_path=path, threads=1))
    b = emit_csv(run_scenario(scn, scenario_path=path, threads=1))
    c = emit_csv(run_scenario(scn, scenario_path=path, threads=2))
    assert a == b == c


# ---------------------------------------------------------------------------
# entry point and exit codes
# ---------------------------------------------------------------------------

def test_main_writes_out_file(tmp_path, capsys):
    path = write_scn(tmp_path, BASE)
    out = tmp_path / "report.csv"
    code = main(["--scenario", path, "--format", "csv", "--out", str(out)])
    assert code == EXIT_OK
    assert capsys.readouterr().out == ""
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "estimator,value,std_error" and len(lines) == 10


def test_main_overrides_change_results(tmp_path, capsys):
    path = write_scn(tmp_path, BASE)
    assert main(["--scenario", path, "--format", "csv"]) == EXIT_OK
    base_out = capsys.readouterr().out
    assert main(["--scenario", path, "--format", "csv", "--seed", "77"]) == EXIT_OK
    seeded = capsys.readouterr().out
    assert base_out != seeded
    assert main(["--scenario", path, "--format", "csv", "--paths", "10000"]) == EXIT_OK
    fewer = capsys.readouterr().out
    assert base_out != fewer


def test_main_extra_checks_flag(tmp_path, capsys):
    path = write_scn(tmp_path, BASE)
    code = main(["--scenario", path, "--check", "normalization", "--check", "martingale"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "normalization   pass" in out and "martingale      pass" in out


def test_main_bad_scenario_exit_code(tmp_path, capsys):
    path = write_scn(tmp_path, BASE + "wat = 1\n")
    assert main(["--scenario", path]) == EXIT_BAD_SCENARIO
    assert "scenario error" in capsys.readouterr().err


def test_main_unknown_check_exit_code(tmp_path, capsys):
    path = write_scn(tmp_path, BASE)
    assert main(["--scenario", path, "--check", "wat"]) == EXIT_BAD_SCENARIO
    assert "unknown check" in capsys.readouterr().err


def test_main_bad_threads_exit_code(tmp_path, capsys):
    path = write_scn(tmp_path, BASE)
    assert main(["--scenario", path, "--threads", "0"]) == EXIT_BAD_SCENARIO
    capsys.readouterr()


def test_main_grid_rejection_exit_code(tmp_path, capsys):
    body = BASE.replace("nodes = 101", "nodes = 801").replace(
        "time_steps = 200", "time_steps = 50") + "fd_substep = false\n"
    path = write_scn(tmp_path, body)
    assert main(["--scenario", path]) == EXIT_GRID_REJECTED
    err = capsys.readouterr().err
    assert "grid rejected" in err and "time steps" in err


def test_known_checks_cover_registry():
    from nexpect.cli import CHECK_REGISTRY
    assert set(KNOWN_CHECKS) == set(CHECK_REGISTRY)
