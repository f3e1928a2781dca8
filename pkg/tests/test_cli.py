import json
import math
import os

import pytest

from orbitentropy.cli import ConfigError, load_config, main, run

SFT = """
action:
  space: circle
  generators: [{linear: 2}, {linear: 3}]
command: sft
"""

EST = """
action:
  space: circle
  generators: [{rotation: 0}, {rotation: 0.6180339887498949}]
command: estimate
schedule: {n: [2, 3], epsilon: 0.1, grid: "1/32"}
"""


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_sft_report(tmp_path):
    out = tmp_path / "out"
    assert main(["--config", _write(tmp_path, SFT), "--out", str(out)]) == 0
    summary = json.loads((out / "sft.json").read_text())
    row = summary["rows"][0]
    assert abs(row["rho"] - 5) < 1e-9 and row["irreducible"] and row["column_sums_ok"]
    assert abs(row["entropy_nats"] - math.log(5)) < 1e-9
    header = (out / "sft.csv").read_text().splitlines()
    assert header[0].startswith("# generated")
    assert header[1].split(",")[:6] == ["L_list", "kM", "rho", "entropy_nats", "exact_target", "abs_err"]


def test_estimate_columns_and_determinism(tmp_path):
    cfg = _write(tmp_path, EST)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--config", cfg, "--out", str(a)]) == 0
    assert main(["--config", cfg, "--out", str(b)]) == 0
    assert (a / "estimate.json").read_bytes() == (b / "estimate.json").read_bytes()
    lines_a = (a / "estimate.csv").read_text().splitlines()
    assert lines_a[1].split(",")[:6] == ["n", "epsilon", "grid", "count", "rate", "elapsed_ms"]
    strip = lambda lines: [",".join(l.split(",")[:5]) for l in lines[1:]]
    assert strip(lines_a) == strip((b / "estimate.csv").read_text().splitlines())
    summary = json.loads((a / "estimate.json").read_text())
    assert summary["exact"]["entropy"] == pytest.approx(math.log(2))


def test_budget_exceeded_rows_continue(tmp_path):
    text = EST.replace("n: [2, 3]", "n: [2, 12]")
    out = tmp_path / "o"
    assert main(["--config", _write(tmp_path, text), "--out", str(out), "--budget", "5000"]) == 0
    rows = json.loads((out / "estimate.json").read_text())["rows"]
    assert [r["status"] for r in rows] == ["ok", "budget_exceeded"]


def test_empty_schedule_rejected():
    with pytest.raises(ConfigError):
        load_config(EST.replace('schedule: {n: [2, 3], epsilon: 0.1, grid: "1/32"}', "schedule: []"))


def test_parse_error_reports_line(tmp_path, capsys):
    bad = SFT.replace("{linear: 3}", "{linear: three}")
    assert main(["--config", _write(tmp_path, bad)]) == 2
    assert "line 4" in capsys.readouterr().err
    with pytest.raises(ConfigError) as exc:
        load_config(SFT + "colour: blue\n")
    assert exc.value.line == 6


@pytest.mark.parametrize("command", ["bounds", "power-check", "preimage"])
def test_other_commands_pass_checks(tmp_path, command):
    out = tmp_path / command
    assert main(["--config", _write(tmp_path, SFT), "--command", command, "--out", str(out)]) == 0
    assert json.loads((out / f"{command}.json").read_text())["ok"]


def test_hurley_command(tmp_path):
    text = """
action: {generators: [{linear: 2}]}
command: hurley
params: {n: 6, epsilon: 0.25}
"""
    out = tmp_path / "h"
    assert main(["--config", _write(tmp_path, text), "--out", str(out)]) == 0
    row = json.loads((out / "hurley.json").read_text())["rows"][0]
    assert row["holds"] and row["count_h_m"] == 64


def test_conjugacy_command(tmp_path):
    text = SFT.replace("command: sft", "command: conjugacy-check\nschedule: {n: [3], epsilon: 0.05, grid: 0.0625}")
    out = tmp_path / "c"
    assert main(["--config", _write(tmp_path, text), "--out", str(out)]) == 0


def test_failed_invariant_sets_exit_status(tmp_path):
    text = SFT.replace("command: sft", "command: conjugacy-check\nschedule: {n: [3], epsilon: 0.05, grid: 0.0625}"
                       "\nparams: {tolerance: 0.0, c: 0.3}")
    out = tmp_path / "f"
    assert main(["--config", _write(tmp_path, text), "--out", str(out)]) == 1


def test_run_returns_report(tmp_path):
    cfg = load_config(SFT, {"out": str(tmp_path)})
    rep = run(cfg)
    assert rep.ok and rep.exact["entropy"] == pytest.approx(math.log(5))
    assert os.path.isdir(tmp_path)
