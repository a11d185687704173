import csv
import io
import json

import pytest

from hmbounds import cli
from hmbounds.bounds import EQUALITY, VIOLATED
from hmbounds.cli import (CONFIG_FORMAT, FAILED, MANIFEST_CSV_HEADER, RunManifest,
                          convergence_study, emit_report, main, manifest_from_json, richardson,
                          run, thread_count)
from hmbounds.errors import ParameterError
from hmbounds.mesh import SurfaceSpec
from hmbounds.scenarios import REGISTRY, Scenario, get_scenario

CHEAP = ["disk-steklov", "ellipse", "scaled-sphere"]

BAD_ENTRY = {"name": "broken", "surface": {"kind": "disk", "params": {"rings": 0}},
             "theorems": ["steklov_genus"]}


@pytest.fixture(scope="module")
def cheap():
    return run(CHEAP, levels=2, include_timings=False)


def write_config(tmp_path, scenarios, **extra):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"format": CONFIG_FORMAT, "version": 1, "scenarios": scenarios,
                                **extra}))
    return path


def test_every_cell_has_one_row(cheap):
    expected = {(name, t, lv) for name in CHEAP for t in REGISTRY[name].theorems
                for lv in range(2)}
    got = [(r["scenario"], r["theorem_id"], r["level"]) for r in cheap.rows]
    assert sorted(got) == sorted(expected)
    assert cheap.ok and cheap.violations == [] and cheap.failures == []


def test_disk_scenario_reports_equalities(registry_manifest):
    finest = {r["theorem_id"]: r["verdict"] for r in registry_manifest.rows
              if r["scenario"] == "disk-steklov" and r["level"] == 2}
    assert finest["steklov_genus"] == EQUALITY and finest["ext_steklov"] == EQUALITY
    sphere = [r for r in registry_manifest.rows
              if r["scenario"] == "sphere-equalities" and r["level"] == 2]
    assert len(sphere) == 4 and {r["verdict"] for r in sphere} == {EQUALITY}


def test_invalid_scenario_gives_one_failure_row():
    m = run([BAD_ENTRY, "disk-steklov"], levels=1, include_timings=False)
    bad = [r for r in m.rows if r["scenario"] == "broken"]
    assert len(bad) == 1 and bad[0]["verdict"] == FAILED and "ParameterError" in bad[0]["error"]
    assert [r for r in m.rows if r["scenario"] == "disk-steklov"]
    assert not m.ok


def test_failing_cell_does_not_stop_the_run(monkeypatch):
    original = cli._Level.evaluate

    def flaky(self, theorem):
        if theorem == "ext_steklov":
            raise RuntimeError("boom")
        return original(self, theorem)

    monkeypatch.setattr(cli._Level, "evaluate", flaky)
    m = run(["disk-steklov"], levels=2, include_timings=False)
    failed = [r for r in m.rows if r["verdict"] == FAILED]
    assert len(failed) == 2 and all(r["theorem_id"] == "ext_steklov" for r in failed)
    assert len(m.rows) == 2 * len(REGISTRY["disk-steklov"].theorems)


def test_violations_make_the_run_fail(cheap):
    d = cheap.to_dict()
    d["rows"] = [dict(d["rows"][0], verdict=VIOLATED)] + d["rows"][1:]
    bad = RunManifest.from_dict(d)
    assert not bad.ok and len(bad.violations) == 1


def test_json_round_trip(cheap):
    text = emit_report(cheap, "json")
    back = manifest_from_json(text)
    assert back.to_dict() == json.loads(text)
    assert emit_report(back, "json") == text


def test_csv_has_one_line_per_cell(cheap):
    text = emit_report(cheap, "csv")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == MANIFEST_CSV_HEADER.split(",")
    assert len(rows) - 1 == len(cheap.rows)
    assert all(len(r) == 8 for r in rows)


def test_markdown_verdict_matrix(cheap):
    text = emit_report(cheap, "markdown")
    matrix = text.split("## Verdict matrix")[1].split("## Rows")[0]
    body = [ln for ln in matrix.splitlines() if ln.startswith("| ") and "scenario" not in ln]
    assert len(body) == len(CHEAP)
    header = [ln for ln in matrix.splitlines() if ln.startswith("| scenario")][0]
    theorems = [c.strip() for c in header.strip("|").split("|")][1:]
    for line in body:
        cells = [c.strip() for c in line.strip("|").split("|")]
        name, verdicts = cells[0], cells[1:]
        assert len(verdicts) == len(theorems)
        for t, v in zip(theorems, verdicts):
            assert (v != "") == (t in REGISTRY[name].theorems)


def test_unknown_format_rejected(cheap):
    with pytest.raises(ParameterError):
        emit_report(cheap, "xml")


def test_parallel_matches_serial(cheap):
    parallel = run(CHEAP, levels=2, jobs=2, include_timings=False)
    parallel.environment = cheap.environment
    assert emit_report(parallel, "json") == emit_report(cheap, "json")


def test_rerun_is_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path, ["ellipse"], levels=2)
    outs = [tmp_path / "a.json", tmp_path / "b.json"]
    for out in outs:
        assert main(["run", str(cfg), "--no-timings", "--out", str(out)]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()


def test_run_exit_codes(tmp_path, capsys):
    assert main(["run", str(write_config(tmp_path, [BAD_ENTRY])), "--format", "csv"]) == 1
    assert "failed" in capsys.readouterr().out
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    bogus = tmp_path / "bogus.json"
    bogus.write_text(json.dumps({"format": "other", "version": 1}))
    assert main(["run", str(bogus)]) == 2
    assert main(["converge", "no-such-scenario"]) == 2


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == len(REGISTRY) >= 12
    assert lines[0].split()[0] == next(iter(REGISTRY))


def test_thread_override(monkeypatch):
    monkeypatch.delenv(cli.THREADS_ENV, raising=False)
    assert thread_count() == 1
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert thread_count() == 3
    for bad in ("0", "many"):
        monkeypatch.setenv(cli.THREADS_ENV, bad)
        with pytest.raises(ParameterError):
            thread_count()


def test_sphere_eigenvalue_convergence_order():
    table = convergence_study(get_scenario("sphere-newton"), "lambda_1")
    assert table.observed_order >= 1.5
    assert table.extrapolated == pytest.approx(2.0, rel=1e-4)


def test_disk_steklov_extrapolation():
    table = convergence_study(get_scenario("disk-steklov"), "sigma_1")
    assert abs(table.extrapolated - 1.0) <= 0.002


def test_convergence_preconditions():
    with pytest.raises(ParameterError):
        convergence_study(get_scenario("disk-steklov").with_overrides(levels=2))
    with pytest.raises(ParameterError):
        convergence_study(get_scenario("disk-steklov"), "lambda_1")
    with pytest.raises(ParameterError):
        convergence_study(get_scenario("disk-steklov"), "reilly")


def test_richardson_on_exact_first_order_data():
    h = [0.4, 0.2, 0.1]
    g_inf, order, _ = richardson(h, [3 + 2 * x for x in h])
    assert g_inf == pytest.approx(3.0, rel=1e-12)
    assert order == pytest.approx(1.0, rel=1e-12)


def test_converge_command_csv(tmp_path):
    out = tmp_path / "conv.csv"
    assert main(["converge", "ellipse", "--quantity", "ext_steklov", "--format", "csv",
                 "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["level", "h", "lhs", "rhs", "gap"] and len(rows) == 4


def test_scenario_validation():
    surface = SurfaceSpec("disk", {"rings": 2})
    with pytest.raises(ParameterError):
        Scenario("x", surface, ("reilly",))
    with pytest.raises(ParameterError):
        Scenario("x", surface, ("steklov_genus",), refinement_levels=7)
    with pytest.raises(ParameterError):
        Scenario("x", surface, ("steklov_genus",), eigen_count=2)
    with pytest.raises(ParameterError):
        Scenario("x", surface, ("not_a_theorem",))
    with pytest.raises(ParameterError):
        get_scenario("nope")
