import json
import pathlib

import pytest
from click.testing import CliRunner

from stamc.cli import main

MODELS = pathlib.Path(__file__).resolve().parent.parent / "models"

SMALL = """
int heads = 0;
clock x;
template Coin() {
  init loc wait { inv x <= 1; }
  committed loc flip;
  loc rest;
  wait -> flip { guard x >= 1; }
  flip -> rest { weight 3; update heads := 1; }
  flip -> rest { weight 7; }
}
system Coin;
"""

BAD_WEIGHT = """
template T() { init loc a; a -> a { weight 0; } }
system T;
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.sta"
    p.write_text(SMALL)
    return str(p)


def test_validate_ok(runner):
    res = runner.invoke(main, ["validate", str(MODELS / "av.sta")])
    assert res.exit_code == 0
    assert "ok (11 templates, 11 components)" in res.output


def test_validate_reports_issue_code(runner, tmp_path):
    p = tmp_path / "bad.sta"
    p.write_text(BAD_WEIGHT)
    res = runner.invoke(main, ["validate", str(p)])
    assert res.exit_code == 1
    assert "nonpositive weight" in res.output


def test_validate_missing_file(runner):
    res = runner.invoke(main, ["validate", "no/such/file.sta"])
    assert res.exit_code == 2


def test_validate_parse_error(runner, tmp_path):
    p = tmp_path / "junk.sta"
    p.write_text("template {")
    res = runner.invoke(main, ["validate", str(p)])
    assert res.exit_code == 1


def test_check_writes_results_json(runner, small, tmp_path):
    q = tmp_path / "suite.q"
    q.write_text('Q1: Pr[<=5](<> heads == 1) >= 0.1 expect valid;\n'
                 'Q2: Pr[<=5](<> heads == 1);\n')
    out = tmp_path / "out"
    res = runner.invoke(main, ["check", small, str(q), "--seed", "7",
                               "--epsilon", "0.2", "--out", str(out)])
    assert res.exit_code == 0, res.output
    payload = json.loads((out / "results.json").read_text())
    assert payload["manifest"]["seed"] == 7
    by_name = {r["name"]: r for r in payload["results"]}
    assert by_name["Q1"]["verdict"] == "valid"
    assert by_name["Q1"]["match"] is True
    assert by_name["Q2"]["verdict"] == "estimate-only"
    assert by_name["Q2"]["match"] is None
    assert 0.0 <= by_name["Q2"]["ci"][0] <= by_name["Q2"]["ci"][1] <= 1.0
    assert "Q1" in res.output and "valid" in res.output


def test_check_expected_mismatch_exits_4(runner, small, tmp_path):
    q = tmp_path / "suite.q"
    q.write_text('Q1: Pr[<=5](<> heads == 1) >= 0.9 expect valid;\n')
    res = runner.invoke(main, ["check", small, str(q),
                               "--out", str(tmp_path / "o")])
    assert res.exit_code == 4
    assert "mismatch" in res.output


def test_check_query_parse_error_exits_3(runner, small, tmp_path):
    q = tmp_path / "suite.q"
    q.write_text("Pr[<=5](<> heads ==\n")
    res = runner.invoke(main, ["check", small, str(q),
                               "--out", str(tmp_path / "o")])
    assert res.exit_code == 3


def test_check_invalid_model_exits_1(runner, tmp_path):
    m = tmp_path / "bad.sta"
    m.write_text(BAD_WEIGHT)
    q = tmp_path / "suite.q"
    q.write_text("Pr[<=5](<> 1 == 1)\n")
    res = runner.invoke(main, ["check", str(m), str(q),
                               "--out", str(tmp_path / "o")])
    assert res.exit_code == 1


def test_check_bound_override(runner, small, tmp_path):
    q = tmp_path / "suite.q"
    # heads flips by t = 1; an overridden tiny bound leaves no time for it
    q.write_text("Q1: Pr[<=5](<> heads == 1) >= 0.1;\n")
    out = tmp_path / "o"
    res = runner.invoke(main, ["check", small, str(q), "--bound-override",
                               "0.5", "--out", str(out)])
    assert res.exit_code == 0
    [row] = json.loads((out / "results.json").read_text())["results"]
    assert row["verdict"] == "invalid"


def test_check_expected_histogram_csv(runner, small, tmp_path):
    q = tmp_path / "suite.q"
    q.write_text("H: E[<=5; 20](max: heads);\n")
    out = tmp_path / "o"
    res = runner.invoke(main, ["check", small, str(q), "--out", str(out)])
    assert res.exit_code == 0
    lines = (out / "H_hist.csv").read_text().splitlines()
    assert lines[0].startswith("# manifest: {")
    assert lines[1] == "bin_lo,bin_hi,count"


def test_simulate_inline_query(runner, small, tmp_path):
    out = tmp_path / "o"
    res = runner.invoke(main, [
        "simulate", small, "--query", "simulate 2 [<=3] {heads, x}",
        "--sample-step", "1", "--seed", "1", "--out", str(out)])
    assert res.exit_code == 0, res.output
    lines = (out / "q0.csv").read_text().splitlines()
    assert lines[0].startswith("# manifest: {")
    assert lines[1] == "run,t,heads,x"
    assert len(lines) > 6  # 2 runs, grid plus event rows


def test_simulate_requires_exactly_one_source(runner, small, tmp_path):
    res = runner.invoke(main, ["simulate", small])
    assert res.exit_code != 0
    q = tmp_path / "suite.q"
    q.write_text("Pr[<=5](<> heads == 1)\n")
    res = runner.invoke(main, ["simulate", small, str(q),
                               "--out", str(tmp_path / "o")])
    assert res.exit_code != 0
    assert "no simulate query" in res.output
