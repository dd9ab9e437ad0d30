import json
from pathlib import Path

import pytest

from chonkybft.cli import main

ROOT = Path(__file__).resolve().parent.parent
SC = ROOT / "scenarios"


@pytest.fixture(autouse=True)
def trace_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("CHONKYBFT_TRACE_DIR", str(tmp_path / "traces"))
    return tmp_path / "traces"


def test_run_pass(capsys):
    assert main(["run", str(SC / "fig1_happy.json")]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "ok   agreement" in out


def test_run_fail_reports_trace_path(capsys, trace_dir):
    assert main(["run", str(SC / "n5_agreement_violation.json")]) == 1
    out = capsys.readouterr().out
    assert "FAIL agreement @ record" in out
    path = trace_dir / "n5_agreement_violation-seed0.json"
    assert f"trace: {path}" in out and path.exists()
    assert main(["replay", str(path)]) == 0


def test_run_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": 1, "name": "x", "config": {"n": 6}}))
    assert main(["run", str(bad)]) == 2
    assert "config" in capsys.readouterr().err


def test_replay_divergence_and_version(tmp_path, capsys):
    golden = (ROOT / "tests" / "golden" / "fig2_newview-seed0.json").read_text()
    moved = tmp_path / "moved.json"
    moved.write_text(golden.replace('"seed": 0,', '"seed": 1,', 1))
    assert main(["replay", str(moved)]) == 1
    assert "first divergence" in capsys.readouterr().out
    old = tmp_path / "old.json"
    old.write_text(golden.replace('"schema": 1,', '"schema": 0,', 1))
    assert main(["replay", str(old)]) == 2
    assert main(["replay", str(tmp_path / "missing.json")]) == 2


def test_explore_zero_steps_passes(capsys):
    assert main(["explore", "--n", "6", "--f", "1", "--seeds", "20", "--steps", "0"]) == 0
    assert json.loads(capsys.readouterr().out)["violations"] == []


def test_explore_rejects_unsafe_without_flag(capsys):
    assert main(["explore", "--n", "5", "--f", "1", "--seeds", "1"]) == 2


def test_guided_unsafe_explore_finds_and_stores(capsys, trace_dir):
    code = main(["explore", "--n", "5", "--f", "1", "--seeds", "200", "--unsafe-config",
                 "--guided", "--stop-after", "1"])
    assert code == 1
    summary = json.loads(capsys.readouterr().out)
    [v] = summary["violations"]
    assert "agreement" in v["monitors"]
    assert main(["replay", v["trace"]]) == 0


def test_bench(capsys):
    assert main(["bench", "--n", "6", "--views", "50"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["one_proposal_per_view"] and out["quorum_votes_per_view"]


def test_seed_ranges(capsys):
    main(["explore", "--n", "6", "--f", "1", "--seeds", "5:9", "--steps", "5"])
    assert json.loads(capsys.readouterr().out)["runs"] == 4
