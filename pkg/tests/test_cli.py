from __future__ import annotations

import json
from pathlib import Path

from deltaevolve.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_OK, main
from deltaevolve.evaluators import layout_to_json
from deltaevolve.evaluators.hexpack import baseline_lattice_layout


def write_config(tmp_path: Path, **overrides) -> Path:
    raw = {"task": "hexagon", "max_iterations": 4, "seed": 42}
    raw.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


def test_run_then_report_and_resume(tmp_path, capsys):
    config = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["run", "--config", str(config), "--out", str(out), "--provider", "mutator"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["iterations"] == 4
    assert (out / "metrics.jsonl").exists()

    assert main(["report", "--run", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].endswith("best_scores.csv")
    assert (out / "best_scores.csv").exists()

    assert main(["resume", "--out", str(out), "--iterations", "6", "--provider", "mutator"]) == EXIT_OK
    resumed = json.loads(capsys.readouterr().out)
    assert resumed["iterations"] == 6


def test_unknown_config_key_exits_2(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"task": "hexagon", "iterations": 5}))
    code = main(["run", "--config", str(path), "--out", str(tmp_path / "o"), "--provider", "mutator"])
    assert code == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_unknown_policy_exits_2(tmp_path, capsys):
    config = write_config(tmp_path)
    code = main(
        [
            "run",
            "--config",
            str(config),
            "--policy",
            "Mystery",
            "--out",
            str(tmp_path / "o"),
            "--provider",
            "mutator",
        ]
    )
    assert code == EXIT_CONFIG


def test_bad_checkpoint_exits_3(tmp_path, capsys):
    out = tmp_path / "run"
    out.mkdir()
    (out / "checkpoint.json").write_text("{ broken")
    assert main(["resume", "--out", str(out), "--provider", "mutator"]) == EXIT_CHECKPOINT
    assert "checkpoint error" in capsys.readouterr().err


def test_unknown_provider_exits_2(tmp_path):
    config = write_config(tmp_path)
    code = main(["run", "--config", str(config), "--out", str(tmp_path / "o"), "--provider", "wat"])
    assert code == EXIT_CONFIG


def test_validate_prints_report(tmp_path, capsys):
    candidate = tmp_path / "layout.json"
    candidate.write_text(layout_to_json(baseline_lattice_layout()))
    assert main(["validate", "--task", "hexagon", "--candidate", str(candidate)]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["valid"] is True
    assert abs(payload["combined_score"] - 0.4913) < 1e-4


def test_ablate_prints_table(tmp_path, capsys):
    config = write_config(tmp_path, max_iterations=3)
    code = main(
        [
            "ablate",
            "--config",
            str(config),
            "--policies",
            "FullCode,BlindElite",
            "--out",
            str(tmp_path / "ab"),
            "--provider",
            "mutator",
        ]
    )
    assert code == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("policy,")
    assert len(lines) == 3


def test_ablate_single_policy_exits_2(tmp_path):
    config = write_config(tmp_path)
    code = main(
        [
            "ablate",
            "--config",
            str(config),
            "--policies",
            "FullCode",
            "--out",
            str(tmp_path / "ab"),
            "--provider",
            "mutator",
        ]
    )
    assert code == EXIT_CONFIG


def test_scripted_provider_requires_path(tmp_path):
    config = write_config(tmp_path)
    code = main(["run", "--config", str(config), "--out", str(tmp_path / "o"), "--provider", "scripted:"])
    assert code == EXIT_CONFIG


def test_scripted_provider_missing_fixture_exits_2(tmp_path):
    config = write_config(tmp_path)
    code = main(
        [
            "run",
            "--config",
            str(config),
            "--out",
            str(tmp_path / "o"),
            "--provider",
            f"scripted:{tmp_path}/missing.txt",
        ]
    )
    assert code == EXIT_CONFIG


def test_validate_missing_candidate_exits_2(tmp_path):
    code = main(["validate", "--task", "hexagon", "--candidate", str(tmp_path / "nope.json")])
    assert code == EXIT_CONFIG


def test_validate_unknown_task_exits_2(tmp_path):
    candidate = tmp_path / "layout.json"
    candidate.write_text("{}")
    code = main(["validate", "--task", "sudoku", "--candidate", str(candidate)])
    assert code == EXIT_CONFIG
