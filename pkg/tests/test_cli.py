from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from agentgraph.cli import main

GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def dinner_args(data_dir, tmp_path):
    return ["run", "plan a dinner in Paris",
            "--rules", str(data_dir / "rules" / "dinner.yaml"),
            "--tools", str(data_dir / "catalog" / "tools.json"),
            "--out", str(tmp_path / "traces")]


def test_run_writes_a_deterministic_trace(dinner_args, tmp_path, capsys) -> None:
    contents = []
    for _ in range(3):
        assert main(dinner_args) == 0
        document = json.loads((tmp_path / "traces" / "plan-a-dinner-in-paris.json").read_text(encoding="utf-8"))
        contents.append(document["content"])
    assert contents[0] == contents[1] == contents[2]
    assert contents[0]["mode"] == "parallel"
    assert [t["status"] for t in contents[0]["tasks"]] == ["completed"] * 3
    assert "out" not in contents[0]["config"]
    assert "Dinner in Paris is set" in capsys.readouterr().out


def test_run_flags_reach_the_trace(dinner_args, tmp_path) -> None:
    assert main(dinner_args + ["--mode", "seq", "--name", "dinner", "--indirect-deps", "--no-tool-filtering"]) == 0
    content = json.loads((tmp_path / "traces" / "dinner.json").read_text(encoding="utf-8"))["content"]
    assert content["mode"] == "sequential"
    assert content["config"]["include_indirect_dependencies"] is True
    assert content["config"]["semantic_tool_filtering"] is False


def test_run_with_a_config_file(dinner_args, tmp_path) -> None:
    config = tmp_path / "run.yaml"
    config.write_text("mode: seq\nconsolidation: concat\n", encoding="utf-8")
    assert main(dinner_args + ["--config", str(config)]) == 0
    content = json.loads((tmp_path / "traces" / "plan-a-dinner-in-paris.json").read_text(encoding="utf-8"))["content"]
    assert content["mode"] == "sequential"
    assert content["final_answer"].startswith("weather forecast: weather in Paris: sunny")


def test_run_exit_codes(data_dir, tmp_path) -> None:
    tools = str(data_dir / "catalog" / "tools.json")
    rules = str(data_dir / "rules" / "dinner.yaml")
    silent = tmp_path / "silent.yaml"
    silent.write_text("rules: []\nfallback: I do not know\n", encoding="utf-8")
    bad_config = tmp_path / "bad.yaml"
    bad_config.write_text("colour: blue\n", encoding="utf-8")
    bad_pattern = tmp_path / "bad_pattern.yaml"
    bad_pattern.write_text("rules:\n  - pattern: '(unclosed'\n    response: b\n", encoding="utf-8")
    out = ["--out", str(tmp_path / "traces")]

    assert main(["run", "plan a dinner in Paris", "--rules", str(silent), "--tools", tools] + out) == 2
    assert main(["run", "plan a dinner in Paris", "--tools", tools] + out) == 3
    assert main(["run", "plan a dinner in Paris", "--rules", rules] + out) == 3
    assert main(["run", "--rules", rules, "--tools", tools] + out) == 3
    assert main(["run", "plan a dinner in Paris", "--config", str(bad_config)] + out) == 3
    assert main(["run", "plan a dinner in Paris", "--rules", str(bad_pattern), "--tools", tools] + out) == 3
    assert main(["run", "plan a dinner in Paris", "--rules", rules, "--tools", str(tmp_path / "none.json")] + out) == 4
    assert main(["run", "plan a dinner in Paris", "--config", str(tmp_path / "none.yaml")] + out) == 4


def test_replayed_scenarios_evaluate_perfectly(data_dir, tmp_path) -> None:
    traces, reports = tmp_path / "traces", tmp_path / "reports"
    assert main(["run", "--scenarios", str(data_dir / "scenarios"),
                 "--rules", str(data_dir / "rules" / "scenarios.yaml"), "--out", str(traces)]) == 0
    assert len(list(traces.glob("*.json"))) == 6

    assert main(["eval", str(data_dir / "scenarios"), str(traces), "--out", str(reports)]) == 0
    frame = pd.read_csv(reports / "metrics.csv")
    assert len(frame) == 6
    for column in ("node_f1", "edge_f1", "tool_f1", "ssi", "path_length_similarity", "answer_score"):
        assert (frame[column] == 1.0).all(), column
    assert (frame["ged"] == 0).all()
    golden = pd.read_csv(GOLDEN / "replay_metrics.csv")
    pd.testing.assert_frame_equal(frame, golden, check_dtype=False)
    report = json.loads((reports / "bake-bread.json").read_text(encoding="utf-8"))
    assert report["report"]["scenario"] == "Bake bread"
    assert report["config"]["theta"] == 0.75


def test_eval_exit_codes(data_dir, tmp_path) -> None:
    empty = tmp_path / "traces"
    empty.mkdir()
    scenarios = str(data_dir / "scenarios")
    assert main(["eval", scenarios, str(empty), "--out", str(tmp_path / "reports")]) == 5
    assert main(["eval", scenarios, str(tmp_path / "absent")]) == 4
    assert main(["eval", scenarios, str(empty), "--theta", "3"]) == 3


def test_report(tmp_path, capsys) -> None:
    csv = tmp_path / "metrics.csv"
    pd.DataFrame({
        "scenario": list("abcdef"),
        "category": ["sequential"] * 3 + ["parallel"] * 3,
        "node_f1": [0.2, 0.6, 0.9, 0.4, 0.5, 1.0],
        "ssi": [0.3, 0.5, 0.8, 0.6, 0.2, 0.9],
        "answer_score": [0.1, 0.5, 0.8, 0.4, 0.3, 0.9],
    }).to_csv(csv, index=False)
    assert main(["report", str(csv)]) == 0
    report = json.loads((tmp_path / "metrics.report.json").read_text(encoding="utf-8"))
    assert set(report) == {"parallel", "sequential", "all"}
    assert report["all"]["n"] == 6
    assert report["all"]["correlations"]["node_f1"]["r"] > 0.9
    assert "R^2" in capsys.readouterr().out


def test_report_exit_codes(tmp_path) -> None:
    assert main(["report", str(tmp_path / "absent.csv")]) == 4
    csv = tmp_path / "thin.csv"
    csv.write_text("scenario,node_f1\na,1.0\n", encoding="utf-8")
    assert main(["report", str(csv)]) == 4


def test_dataset_build_and_validate(data_dir, tmp_path, capsys) -> None:
    out = tmp_path / "built"
    assert main(["dataset", "build", str(data_dir / "asynchow_sample.csv"), str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["make-instant-noodles", "tidy-the-kitchen"]
    assert main(["dataset", "validate", str(out)]) == 0
    assert "2 valid scenario(s), 0 diagnostic(s)" in capsys.readouterr().out


def test_dataset_validate_reports_corruption(scenario_tree, capsys) -> None:
    (scenario_tree / "host-a-dinner-party" / "graph.json").write_text("{", encoding="utf-8")
    assert main(["dataset", "validate", str(scenario_tree)]) == 6
    out = capsys.readouterr().out
    assert "INVALID" in out and "host-a-dinner-party" in out
    assert "5 valid scenario(s), 1 diagnostic(s)" in out


def test_dataset_validate_missing_root(tmp_path) -> None:
    assert main(["dataset", "validate", str(tmp_path / "absent")]) == 4
