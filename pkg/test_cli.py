"""
Command-line surface: exit codes, file outputs and the JSON report
"""

import json
from pathlib import Path

from app.cli import EXIT_INPUT, EXIT_NOT_CERTIFIED, EXIT_OK, run
from app.config import settings
from app.services.casestudies import program1
from app.services.model_io import load_model

CASESTUDIES = Path(__file__).parent / "casestudies"

COUNTDOWN = {
    "name": "countdown",
    "variables": ["x"],
    "nodes": ["entry", "loop", "exit"],
    "start": "entry",
    "terminal": "exit",
    "edges": [
        {"from": "entry", "to": "loop"},
        {"from": "loop", "to": "loop", "update": {"x": "x - 1"}, "passport": {"linear": ["x >= 0"]}},
        {"from": "loop", "to": "exit", "passport": {"linear": ["x + 1 <= 0"]}},
    ],
    "init": {"linear": ["x >= 1", "x <= 5"]},
    "unsafe": {"loop": [{"linear": ["x <= 0"]}]},
}


def check_cert_args():
    return [
        "check-cert",
        "--model", str(CASESTUDIES / "program3.json"),
        "--certificate", str(CASESTUDIES / "program3_certificate.json"),
    ]


def test_check_certificate_succeeds(capsys):
    assert run(check_cert_args()) == EXIT_OK
    out = capsys.readouterr().out
    assert "certified" in out


def test_json_report_is_written(tmp_path):
    report = tmp_path / "report.json"
    assert run(["--json", str(report)] + check_cert_args()) == EXIT_OK
    data = json.loads(report.read_text())
    assert data["version"] == settings.app_version
    assert data["status"] == "certified"
    assert data["config"]["command"] == "check-cert"
    assert {v["property"] for v in data["verdicts"]} == {"certificate", "unreachability"}


def test_compile_writes_the_model(tmp_path):
    out = tmp_path / "program1.json"
    assert run(["compile", str(CASESTUDIES / "program1.lc"), "-o", str(out)]) == EXIT_OK
    model = load_model(out)
    expected = program1()
    assert model.nodes == expected.nodes
    assert model.variables == expected.variables
    assert len(model.edges) == len(expected.edges)


def test_usage_errors():
    assert run(["verify"]) == EXIT_INPUT
    assert run(["frobnicate"]) == EXIT_INPUT
    assert run(["verify", "--model", "does-not-exist.json"]) == EXIT_INPUT
    assert run(["casestudy", "program3", "--M", "10"]) == EXIT_INPUT


def test_malformed_model_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text(json.dumps({"name": "broken", "variables": ["x"], "nodes": ["a"], "start": "a", "terminal": "b"}))
    assert run(["simulate", "--model", str(path)]) == EXIT_INPUT


def test_witness_gives_not_certified(tmp_path):
    path = tmp_path / "countdown.json"
    path.write_text(json.dumps(COUNTDOWN))
    assert run(["verify", "--model", str(path), "--method", "sos"]) == EXIT_NOT_CERTIFIED


def test_reduce_lists_cycles(tmp_path, capsys):
    assert run(["reduce", "--model", str(CASESTUDIES / "euclid_reduced.json")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "F2->F2#1" in out and "F2->F2#2" in out


def test_infeasible_rate_plan_exits_not_certified(tmp_path):
    halving = {
        "name": "halving",
        "variables": ["x"],
        "nodes": ["entry", "loop", "exit"],
        "start": "entry",
        "terminal": "exit",
        "edges": [{"from": "entry", "to": "loop"}, {"from": "loop", "to": "loop", "update": {"x": "x/2"}}],
        "init": {"linear": ["x - 1 == 0"]},
        "unsafe": {"loop": [{"linear": ["x >= 2"]}]},
    }
    path = tmp_path / "halving.json"
    path.write_text(json.dumps(halving))
    argv = ["verify", "--model", str(path), "--method", "joint", "--theta", "1", "--mu", "0"]
    assert run(argv) == EXIT_NOT_CERTIFIED
    assert run(argv[:-4] + ["--theta", "0.5", "--mu", "0"]) == EXIT_OK


def test_compile_scales_by_the_largest_range(tmp_path):
    out = tmp_path / "scaled.json"
    assert run(["compile", str(CASESTUDIES / "program1.lc"), "--scale", "-o", str(out)]) == EXIT_OK
    assert load_model(out).scale == 100
    assert run(["compile", str(CASESTUDIES / "program1.lc"), "--scale", "250", "-o", str(out)]) == EXIT_OK
    assert load_model(out).scale == 250
